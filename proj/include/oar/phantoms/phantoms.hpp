#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "oar/nn/tensor.hpp"
#include "oar/voxelio/annotations.hpp"
#include "oar/voxelio/corpus.hpp"
#include "oar/voxelio/volume.hpp"

namespace oar::phantoms {

// Synthetic head-slice generator. Organs are randomized ellipses/capsules
// rendered from one shared StructureMap per slice into modality-specific
// appearance; CT gets a bright bone ring and weak soft-tissue contrast, MR
// gets strong soft-tissue contrast and a subdued ring. The tumor-like class
// is nearly iso-intense on CT and bright on MR, which is the information the
// synthesis task must carry across.
struct OrganSpec {
  int class_id = 0;
  double rate = 0.5;        // expected instances per slice (before skew)
  int count_min = 1;        // instances placed together when the organ appears
  int count_max = 1;
  double size_min = 0.06;   // radius as a fraction of image size
  double size_max = 0.10;
  double aspect_min = 0.6;  // minor/major axis ratio
  double aspect_max = 1.0;
  double ct_mean = 80.0;    // raw intensity
  double mr_mean = 400.0;
  bool capsule = false;     // elongated capsule instead of ellipse
};

struct PhantomConfig {
  int image_size = 64;
  int slices_per_case = 6;
  double ct_background = 50.0;
  double mr_background = 100.0;
  double ct_bone = 900.0;
  double mr_bone = 60.0;
  double noise_sigma_ct = 12.0;
  double noise_sigma_mr = 12.0;
  double bias_amplitude = 8.0;
  double skew = 1.0;        // global multiplier on per-class rates
  double clean_fraction = 0.75;
  int tumor_class = 10;     // the MR-salient class
  std::vector<OrganSpec> organs;

  static PhantomConfig desk();                       // 64x64 default inventory
  static PhantomConfig table1_skew(int image_size);  // rates proportional to the
                                                     // reference dataset's counts
  void validate() const;  // throws when demanded organ area cannot fit
};

struct StructureMap {
  int rows = 0, cols = 0;
  std::vector<int> labels;        // class id per pixel, 0 background
  std::vector<int> instance_ids;  // unique per slice, 0 none
  std::vector<std::uint8_t> bone;

  int label_at(int r, int c) const { return labels[static_cast<std::size_t>(r) * cols + c]; }
};

struct PhantomCase {
  voxelio::VolumeScan ct;
  voxelio::VolumeScan mr;
  voxelio::VolumeScan labels;  // class id per voxel
  voxelio::AnnotationSet annotations;
  std::vector<StructureMap> maps;
  bool clean = true;
};

// Deterministic under (seed, case_index); CT and MR render the same maps.
PhantomCase generate_phantom_case(std::uint64_t seed, const PhantomConfig& config,
                                  const std::string& case_id, int case_index = 0);

// Intensity = class/modality lookup + smooth bias field + Gaussian noise.
nn::Tensor render_modality(const StructureMap& map, voxelio::Modality modality,
                           const PhantomConfig& config, std::uint64_t noise_seed);

// Number of instances of `spec` scheduled for case `case_index`; a
// low-discrepancy quota, so corpus totals track rate*slices*skew closely.
int scheduled_instances(const OrganSpec& spec, const PhantomConfig& config, std::uint64_t seed,
                        int case_index);

// Writes volumes, dataset.json, and the annotation manifest under out_dir.
voxelio::DatasetIndex generate_phantom_corpus(const std::filesystem::path& out_dir,
                                              std::uint64_t seed, int cases,
                                              const PhantomConfig& config);

}  // namespace oar::phantoms
