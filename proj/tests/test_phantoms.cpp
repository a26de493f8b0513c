#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "oar/phantoms/phantoms.hpp"
#include "oar/voxelio/corpus.hpp"
#include "oar/voxelio/taxonomy.hpp"

using namespace oar;
using namespace oar::phantoms;
using voxelio::Modality;

TEST_CASE("phantom generation is deterministic under the seed") {
  auto cfg = PhantomConfig::desk();
  auto a = generate_phantom_case(7, cfg, "caseA", 3);
  auto b = generate_phantom_case(7, cfg, "caseA", 3);
  CHECK(a.ct.voxels() == b.ct.voxels());
  CHECK(a.mr.voxels() == b.mr.voxels());
  CHECK(a.labels.voxels() == b.labels.voxels());
  CHECK(a.annotations.instances.size() == b.annotations.instances.size());

  auto c = generate_phantom_case(8, cfg, "caseA", 3);
  CHECK(a.ct.voxels() != c.ct.voxels());
}

TEST_CASE("CT and MR render the same structure map") {
  auto cfg = PhantomConfig::desk();
  auto pc = generate_phantom_case(11, cfg, "caseB", 0);
  REQUIRE(pc.maps.size() == static_cast<std::size_t>(cfg.slices_per_case));
  // labels volume mirrors the maps
  for (int s = 0; s < cfg.slices_per_case; ++s)
    for (int r = 0; r < cfg.image_size; ++r)
      for (int c = 0; c < cfg.image_size; ++c)
        CHECK(pc.labels.at(s, r, c) ==
              static_cast<double>(pc.maps[static_cast<std::size_t>(s)].label_at(r, c)));

  // per-class mean intensities differ between the modality renders
  std::map<int, std::pair<double, int>> ct_mean, mr_mean;
  for (int s = 0; s < cfg.slices_per_case; ++s)
    for (int r = 0; r < cfg.image_size; ++r)
      for (int c = 0; c < cfg.image_size; ++c) {
        int label = static_cast<int>(pc.labels.at(s, r, c));
        if (label == 0) continue;
        ct_mean[label].first += pc.ct.at(s, r, c);
        ct_mean[label].second += 1;
        mr_mean[label].first += pc.mr.at(s, r, c);
        mr_mean[label].second += 1;
      }
  REQUIRE(!ct_mean.empty());
  for (const auto& [cls, acc] : ct_mean) {
    double ct_avg = acc.first / acc.second;
    double mr_avg = mr_mean[cls].first / mr_mean[cls].second;
    CHECK(std::abs(ct_avg - mr_avg) > 10.0);
  }
}

TEST_CASE("render_modality basics") {
  auto cfg = PhantomConfig::desk();
  cfg.noise_sigma_ct = 0.0;
  cfg.noise_sigma_mr = 0.0;
  cfg.bias_amplitude = 0.0;

  SUBCASE("zero noise, flat bias -> piecewise constant lookup") {
    auto pc = generate_phantom_case(5, cfg, "caseC", 0);
    const auto& map = pc.maps[0];
    nn::Tensor img = render_modality(map, Modality::CT, cfg, 99);
    std::map<int, double> lookup;
    for (const auto& o : cfg.organs) lookup[o.class_id] = o.ct_mean;
    lookup[0] = cfg.ct_background;
    for (int r = 0; r < map.rows; ++r)
      for (int c = 0; c < map.cols; ++c) {
        double want = map.bone[static_cast<std::size_t>(r) * map.cols + c]
                          ? cfg.ct_bone
                          : lookup[map.label_at(r, c)];
        CHECK(img.at2(r, c) == doctest::Approx(want).epsilon(1e-12));
      }
  }

  SUBCASE("background-only map -> constant background") {
    StructureMap map;
    map.rows = map.cols = 16;
    map.labels.assign(256, 0);
    map.instance_ids.assign(256, 0);
    map.bone.assign(256, 0);
    nn::Tensor img = render_modality(map, Modality::MR, cfg, 1);
    for (std::int64_t i = 0; i < img.numel(); ++i)
      CHECK(img[i] == doctest::Approx(cfg.mr_background).epsilon(1e-12));
  }

  SUBCASE("class means recoverable within 2 sigma of configured noise") {
    auto noisy = PhantomConfig::desk();
    auto pc = generate_phantom_case(21, noisy, "caseD", 1);
    const auto& map = pc.maps[0];
    nn::Tensor img = render_modality(map, Modality::MR, noisy, 1234);
    std::map<int, std::pair<double, int>> mean;
    for (int r = 0; r < map.rows; ++r)
      for (int c = 0; c < map.cols; ++c) {
        int label = map.label_at(r, c);
        if (map.bone[static_cast<std::size_t>(r) * map.cols + c]) continue;
        mean[label].first += img.at2(r, c);
        mean[label].second += 1;
      }
    for (const auto& o : noisy.organs) {
      auto it = mean.find(o.class_id);
      if (it == mean.end() || it->second.second < 30) continue;
      double avg = it->second.first / it->second.second;
      double tol = noisy.bias_amplitude +
                   2.0 * noisy.noise_sigma_mr / std::sqrt(static_cast<double>(it->second.second));
      CHECK(std::abs(avg - o.mr_mean) < tol + 1.0);
    }
  }
}

TEST_CASE("tumor-like class is MR-salient by at least 3x") {
  auto cfg = PhantomConfig::desk();
  const OrganSpec* tumor = nullptr;
  for (const auto& o : cfg.organs)
    if (o.class_id == cfg.tumor_class) tumor = &o;
  REQUIRE(tumor != nullptr);
  double ct_contrast = std::abs(tumor->ct_mean - cfg.ct_background);
  double mr_contrast = std::abs(tumor->mr_mean - cfg.mr_background);
  CHECK(mr_contrast >= 3.0 * ct_contrast);

  // and measured on an actual render
  auto pc = generate_phantom_case(31, cfg, "caseT", 2);
  double ct_sum = 0, mr_sum = 0, bg_ct = 0, bg_mr = 0;
  int n_t = 0, n_bg = 0;
  for (int s = 0; s < cfg.slices_per_case; ++s)
    for (int r = 0; r < cfg.image_size; ++r)
      for (int c = 0; c < cfg.image_size; ++c) {
        int label = static_cast<int>(pc.labels.at(s, r, c));
        bool bone = pc.maps[static_cast<std::size_t>(s)]
                        .bone[static_cast<std::size_t>(r) * cfg.image_size + c];
        if (bone) continue;
        if (label == cfg.tumor_class) {
          ct_sum += pc.ct.at(s, r, c);
          mr_sum += pc.mr.at(s, r, c);
          ++n_t;
        } else if (label == 0) {
          bg_ct += pc.ct.at(s, r, c);
          bg_mr += pc.mr.at(s, r, c);
          ++n_bg;
        }
      }
  if (n_t > 50) {
    double ct_c = std::abs(ct_sum / n_t - bg_ct / n_bg);
    double mr_c = std::abs(mr_sum / n_t - bg_mr / n_bg);
    CHECK(mr_c > 3.0 * ct_c);
  }
}

TEST_CASE("annotations derived from phantoms satisfy the annotation rules") {
  auto cfg = PhantomConfig::desk();
  for (int case_idx = 0; case_idx < 4; ++case_idx) {
    auto pc = generate_phantom_case(17, cfg, "caseE", case_idx);
    for (const auto& inst : pc.annotations.instances) {
      CHECK(inst.area_px >= 10);
      CHECK(inst.class_id >= 1);
      CHECK(inst.class_id <= 10);
      CHECK(inst.bbox.x0 >= 0.0);
      CHECK(inst.bbox.y0 >= 0.0);
      CHECK(inst.bbox.x1 <= cfg.image_size);
      CHECK(inst.bbox.y1 <= cfg.image_size);
      CHECK(inst.area_px == voxelio::mask_area(inst.mask));
      // bbox contains the mask's tight bounds
      for (int r = 0; r < inst.mask.rows; ++r)
        for (int c = 0; c < inst.mask.cols; ++c)
          if (inst.mask.at(r, c)) {
            CHECK(c + 0.5 >= inst.bbox.x0);
            CHECK(c + 0.5 <= inst.bbox.x1);
            CHECK(r + 0.5 >= inst.bbox.y0);
            CHECK(r + 0.5 <= inst.bbox.y1);
          }
    }
  }
}

TEST_CASE("impossible organ demand is rejected") {
  auto cfg = PhantomConfig::desk();
  for (auto& o : cfg.organs) {
    o.rate = 1.0;
    o.count_max = 6;
    o.size_min = 0.3;
    o.size_max = 0.4;
  }
  CHECK_THROWS(cfg.validate());
  CHECK_THROWS(generate_phantom_case(1, cfg, "bad", 0));
}

TEST_CASE("scheduled instance quotas track configured rates closely") {
  auto cfg = PhantomConfig::table1_skew(64);
  const int cases = 200;
  for (const auto& organ : cfg.organs) {
    std::int64_t total = 0;
    for (int i = 0; i < cases; ++i) total += scheduled_instances(organ, cfg, 123, i);
    double expect = organ.rate * cfg.skew * cfg.slices_per_case * cases;
    CHECK(std::abs(static_cast<double>(total) - expect) <= 1.0 + 1e-9);
  }
}

TEST_CASE("phantom corpus writes a loadable dataset") {
  auto dir = std::filesystem::temp_directory_path() / "oar_test_corpus";
  std::filesystem::remove_all(dir);
  auto cfg = PhantomConfig::desk();
  cfg.slices_per_case = 3;
  auto index = generate_phantom_corpus(dir, 99, 4, cfg);
  CHECK(index.cases.size() == 4);

  auto loaded_index = voxelio::read_dataset_index(dir / "dataset.json");
  CHECK(loaded_index.cases.size() == 4);
  CHECK(loaded_index.taxonomy == voxelio::class_names());

  auto vol = voxelio::read_volume(dir / loaded_index.cases[0].ct_path);
  CHECK(vol.slices() == 3);
  CHECK(vol.rows() == 64);
  CHECK(vol.modality() == Modality::CT);

  auto labels = voxelio::read_volume(dir / loaded_index.cases[0].labels_path);
  CHECK(labels.modality() == Modality::LABEL);

  auto annots = voxelio::read_annotations(dir);
  std::size_t total = 0;
  for (const auto& c : annots) total += c.instances.size();
  CHECK(total > 0);

  // regenerating case 0 reproduces what was written
  auto pc = generate_phantom_case(99, cfg, "case_0000", 0);
  for (std::size_t i = 0; i < vol.voxels().size(); ++i)
    CHECK(vol.voxels()[i] == std::round(pc.ct.voxels()[i]));
  std::filesystem::remove_all(dir);
}
