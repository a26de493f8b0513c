#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "oar/nn/tensor.hpp"

namespace oar::voxelio {

enum class Modality { CT, MR, LABEL };
enum class Phase { pre_treatment, post_treatment };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);
std::string to_string(Phase p);
Phase phase_from_string(const std::string& s);

// 3D voxel grid (slices x rows x cols). CT values are Hounsfield-like, MR is
// arbitrary intensity, LABEL holds integer class ids.
class VolumeScan {
 public:
  VolumeScan() = default;
  VolumeScan(int slices, int rows, int cols, Modality modality);

  int slices() const { return slices_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  Modality modality() const { return modality_; }

  std::array<double, 3> spacing() const { return spacing_; }  // (dz, dy, dx) mm
  void set_spacing(double dz, double dy, double dx);

  const std::string& case_id() const { return case_id_; }
  void set_case_id(std::string id) { case_id_ = std::move(id); }
  Phase phase() const { return phase_; }
  void set_phase(Phase p) { phase_ = p; }

  double& at(int s, int r, int c) {
    return voxels_[(static_cast<std::size_t>(s) * rows_ + r) * cols_ + c];
  }
  double at(int s, int r, int c) const {
    return voxels_[(static_cast<std::size_t>(s) * rows_ + r) * cols_ + c];
  }

  const std::vector<double>& voxels() const { return voxels_; }
  std::vector<double>& voxels() { return voxels_; }

  nn::Tensor slice_tensor(int s) const;  // [rows, cols]

 private:
  int slices_ = 0, rows_ = 0, cols_ = 0;
  Modality modality_ = Modality::CT;
  Phase phase_ = Phase::pre_treatment;
  std::array<double, 3> spacing_ = {1.0, 1.0, 1.0};
  std::string case_id_;
  std::vector<double> voxels_;
};

// Portable on-disk format: a text header (key value per line) next to a raw
// little-endian int16 blob, slice-major. value = raw * scale + offset.
void write_volume(const std::filesystem::path& header_path, const VolumeScan& vol,
                  double scale = 1.0, double offset = 0.0);
VolumeScan read_volume(const std::filesystem::path& header_path);

}  // namespace oar::voxelio
