#include "oar/voxelio/volume.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "oar/common/io.hpp"

namespace oar::voxelio {

std::string to_string(Modality m) {
  switch (m) {
    case Modality::CT: return "CT";
    case Modality::MR: return "MR";
    case Modality::LABEL: return "LABEL";
  }
  return "CT";
}

Modality modality_from_string(const std::string& s) {
  if (s == "CT") return Modality::CT;
  if (s == "MR") return Modality::MR;
  if (s == "LABEL") return Modality::LABEL;
  throw std::invalid_argument("unknown modality: " + s);
}

std::string to_string(Phase p) {
  return p == Phase::pre_treatment ? "pre_treatment" : "post_treatment";
}

Phase phase_from_string(const std::string& s) {
  if (s == "pre_treatment") return Phase::pre_treatment;
  if (s == "post_treatment") return Phase::post_treatment;
  throw std::invalid_argument("unknown phase: " + s);
}

VolumeScan::VolumeScan(int slices, int rows, int cols, Modality modality)
    : slices_(slices), rows_(rows), cols_(cols), modality_(modality) {
  if (slices <= 0 || rows <= 0 || cols <= 0)
    throw std::invalid_argument("VolumeScan: dimensions must be positive");
  voxels_.assign(static_cast<std::size_t>(slices) * rows * cols, 0.0);
}

void VolumeScan::set_spacing(double dz, double dy, double dx) {
  if (dz <= 0.0 || dy <= 0.0 || dx <= 0.0)
    throw std::invalid_argument("VolumeScan: spacing must be positive");
  spacing_ = {dz, dy, dx};
}

nn::Tensor VolumeScan::slice_tensor(int s) const {
  nn::Tensor t({rows_, cols_});
  std::memcpy(t.data(), &voxels_[static_cast<std::size_t>(s) * rows_ * cols_],
              sizeof(double) * static_cast<std::size_t>(rows_) * cols_);
  return t;
}

void write_volume(const std::filesystem::path& header_path, const VolumeScan& vol, double scale,
                  double offset) {
  if (scale == 0.0) throw std::invalid_argument("write_volume: scale must be nonzero");
  std::filesystem::path raw_path = header_path;
  raw_path.replace_extension(".raw");

  std::ostringstream hdr;
  hdr << "OARVOL 1\n";
  hdr << "case_id " << vol.case_id() << "\n";
  hdr << "modality " << to_string(vol.modality()) << "\n";
  hdr << "phase " << to_string(vol.phase()) << "\n";
  hdr << "dims " << vol.slices() << " " << vol.rows() << " " << vol.cols() << "\n";
  auto sp = vol.spacing();
  hdr << "spacing " << sp[0] << " " << sp[1] << " " << sp[2] << "\n";
  hdr << "scale " << scale << "\n";
  hdr << "offset " << offset << "\n";
  hdr << "data " << raw_path.filename().string() << "\n";
  write_text_file(header_path, hdr.str());

  std::vector<std::int16_t> raw(vol.voxels().size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    double v = std::round((vol.voxels()[i] - offset) / scale);
    if (v < -32768.0 || v > 32767.0)
      throw std::runtime_error("write_volume: value " + std::to_string(vol.voxels()[i]) +
                               " does not fit int16 with the given scale/offset");
    raw[i] = static_cast<std::int16_t>(v);
  }
  write_binary_file(raw_path, raw.data(), raw.size() * sizeof(std::int16_t));
}

VolumeScan read_volume(const std::filesystem::path& header_path) {
  std::istringstream in(read_text_file(header_path));
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "OARVOL" || version != 1)
    throw std::runtime_error("read_volume: not an OARVOL header: " + header_path.string());

  std::string case_id, modality_s = "CT", phase_s = "pre_treatment", data_file;
  int s = 0, r = 0, c = 0;
  double dz = 1, dy = 1, dx = 1, scale = 1, offset = 0;
  std::string key;
  while (in >> key) {
    if (key == "case_id") in >> case_id;
    else if (key == "modality") in >> modality_s;
    else if (key == "phase") in >> phase_s;
    else if (key == "dims") in >> s >> r >> c;
    else if (key == "spacing") in >> dz >> dy >> dx;
    else if (key == "scale") in >> scale;
    else if (key == "offset") in >> offset;
    else if (key == "data") in >> data_file;
    else {
      std::string skip;
      std::getline(in, skip);
    }
  }
  if (s <= 0 || r <= 0 || c <= 0)
    throw std::runtime_error("read_volume: missing or invalid dims in " + header_path.string());
  if (data_file.empty())
    throw std::runtime_error("read_volume: missing data entry in " + header_path.string());

  VolumeScan vol(s, r, c, modality_from_string(modality_s));
  vol.set_case_id(case_id);
  vol.set_phase(phase_from_string(phase_s));
  vol.set_spacing(dz, dy, dx);

  auto raw_bytes = read_binary_file(header_path.parent_path() / data_file);
  std::size_t expect = static_cast<std::size_t>(s) * r * c * sizeof(std::int16_t);
  if (raw_bytes.size() != expect)
    throw std::runtime_error("read_volume: raw size mismatch for " + header_path.string());
  const auto* raw = reinterpret_cast<const std::int16_t*>(raw_bytes.data());
  for (std::size_t i = 0; i < vol.voxels().size(); ++i)
    vol.voxels()[i] = static_cast<double>(raw[i]) * scale + offset;
  return vol;
}

}  // namespace oar::voxelio
