#include "oar/phantoms/phantoms.hpp"

#include <cmath>
#include <stdexcept>

#include "oar/common/rng.hpp"
#include "oar/voxelio/taxonomy.hpp"

namespace oar::phantoms {

using voxelio::Modality;
using voxelio::VolumeScan;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Shape {
  double cx, cy;       // center, pixel coords
  double a, b;         // semi-axes (capsule: half-length, radius)
  double angle;        // radians
  bool capsule;

  bool contains(double x, double y) const {
    double dx = x - cx, dy = y - cy;
    double c = std::cos(angle), s = std::sin(angle);
    double u = dx * c + dy * s;
    double v = -dx * s + dy * c;
    if (!capsule) {
      double t = (u / a) * (u / a) + (v / b) * (v / b);
      return t <= 1.0;
    }
    // capsule: segment of half-length (a-b) along u, radius b
    double half = std::max(a - b, 0.0);
    double uu = std::clamp(u, -half, half);
    double du = u - uu;
    return du * du + v * v <= b * b;
  }

  double max_extent() const { return std::max(a, b); }
};

double fractional_offset(std::uint64_t seed, int class_id) {
  std::uint64_t h = seed * 0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(class_id) * 0xd1b54a32d192ed03ull;
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdull;
  h ^= h >> 33;
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace

int scheduled_instances(const OrganSpec& spec, const PhantomConfig& config, std::uint64_t seed,
                        int case_index) {
  double q = spec.rate * config.skew * config.slices_per_case;
  double phi = fractional_offset(seed, spec.class_id);
  double lo = std::floor(static_cast<double>(case_index) * q + phi);
  double hi = std::floor(static_cast<double>(case_index + 1) * q + phi);
  return static_cast<int>(hi - lo);
}

PhantomConfig PhantomConfig::desk() {
  PhantomConfig cfg;
  cfg.organs = {
      // class          rate  cnt    size         aspect      ct     mr    capsule
      {1 /*BrainStem*/, 0.70, 1, 1, 0.100, 0.150, 0.70, 1.00, 85.0, 420.0, false},
      {2 /*Chiasm*/, 0.12, 1, 1, 0.050, 0.075, 0.60, 0.90, 90.0, 450.0, false},
      {3 /*Cochlea*/, 0.16, 1, 2, 0.045, 0.070, 0.70, 1.00, 160.0, 300.0, false},
      {4 /*Eye*/, 0.45, 1, 2, 0.065, 0.100, 0.80, 1.00, 95.0, 500.0, false},
      {5 /*InnerEar*/, 0.16, 1, 2, 0.050, 0.080, 0.60, 0.90, 140.0, 320.0, false},
      {6 /*Larynx*/, 0.28, 1, 1, 0.110, 0.160, 0.70, 1.00, 75.0, 350.0, false},
      {7 /*Lens*/, 0.16, 1, 2, 0.042, 0.060, 0.60, 0.90, 110.0, 380.0, false},
      {8 /*OpticNerve*/, 0.18, 1, 2, 0.050, 0.075, 0.35, 0.55, 80.0, 360.0, true},
      {9 /*SpinalCord*/, 0.95, 1, 1, 0.075, 0.105, 0.80, 1.00, 88.0, 400.0, false},
      {10 /*GTV*/, 0.55, 1, 1, 0.080, 0.120, 0.70, 1.00, 62.0, 700.0, false},
  };
  return cfg;
}

PhantomConfig PhantomConfig::table1_skew(int image_size) {
  // Rates proportional to the per-class instance counts of the reference
  // corpus, scaled so the most frequent class appears on ~95% of slices.
  PhantomConfig cfg = desk();
  cfg.image_size = image_size;
  const double counts[10] = {3422, 488, 785, 3062, 551, 1113, 588, 883, 9693, 5556};
  for (int i = 0; i < 10; ++i)
    cfg.organs[static_cast<std::size_t>(i)].rate = 0.95 * counts[i] / counts[8];
  return cfg;
}

void PhantomConfig::validate() const {
  if (image_size < 16) throw std::invalid_argument("phantom: image_size too small");
  if (slices_per_case < 1) throw std::invalid_argument("phantom: slices_per_case must be >= 1");
  if (noise_sigma_ct < 0 || noise_sigma_mr < 0)
    throw std::invalid_argument("phantom: noise sigma must be >= 0");
  double usable = kPi * 0.40 * 0.40;  // fraction of image area inside the ring
  double demanded = 0.0;
  for (const auto& o : organs) {
    if (o.size_min <= 0 || o.size_max >= 0.5 || o.size_min > o.size_max)
      throw std::invalid_argument("phantom: organ sizes must lie in (0, 0.5)");
    if (o.count_min < 1 || o.count_max < o.count_min)
      throw std::invalid_argument("phantom: bad count range");
    if (o.rate < 0) throw std::invalid_argument("phantom: negative rate");
    demanded += std::min(1.0, o.rate * skew) * o.count_max * kPi * o.size_max * o.size_max;
  }
  if (demanded > 0.6 * usable)
    throw std::invalid_argument(
        "phantom: configured organ area exceeds what a slice can hold (demanded fraction " +
        std::to_string(demanded) + ")");
}

namespace {

StructureMap empty_map(const PhantomConfig& cfg) {
  StructureMap m;
  m.rows = m.cols = cfg.image_size;
  m.labels.assign(static_cast<std::size_t>(m.rows) * m.cols, 0);
  m.instance_ids.assign(m.labels.size(), 0);
  m.bone.assign(m.labels.size(), 0);

  // Skull-like ring around the head region.
  double c = 0.5 * cfg.image_size;
  double outer = 0.47 * cfg.image_size;
  double inner = 0.43 * cfg.image_size;
  for (int r = 0; r < m.rows; ++r)
    for (int col = 0; col < m.cols; ++col) {
      double dx = col + 0.5 - c, dy = r + 0.5 - c;
      double d = std::sqrt(dx * dx + dy * dy);
      if (d <= outer && d >= inner) m.bone[static_cast<std::size_t>(r) * m.cols + col] = 1;
    }
  return m;
}

// Paints the shape if it does not collide with existing organs or the ring.
bool try_paint(StructureMap& m, const Shape& sh, int class_id, int instance_id) {
  int r0 = std::max(0, static_cast<int>(std::floor(sh.cy - sh.max_extent() - 1)));
  int r1 = std::min(m.rows - 1, static_cast<int>(std::ceil(sh.cy + sh.max_extent() + 1)));
  int c0 = std::max(0, static_cast<int>(std::floor(sh.cx - sh.max_extent() - 1)));
  int c1 = std::min(m.cols - 1, static_cast<int>(std::ceil(sh.cx + sh.max_extent() + 1)));

  std::vector<std::size_t> hit;
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) {
      if (!sh.contains(c + 0.5, r + 0.5)) continue;
      std::size_t idx = static_cast<std::size_t>(r) * m.cols + c;
      if (m.labels[idx] != 0 || m.bone[idx]) return false;
      hit.push_back(idx);
    }
  if (hit.empty()) return false;
  for (auto idx : hit) {
    m.labels[idx] = class_id;
    m.instance_ids[idx] = instance_id;
  }
  return true;
}

}  // namespace

nn::Tensor render_modality(const StructureMap& map, Modality modality, const PhantomConfig& config,
                           std::uint64_t noise_seed) {
  bool ct = modality == Modality::CT;
  std::vector<double> lookup(voxelio::kNumClasses + 1,
                             ct ? config.ct_background : config.mr_background);
  for (const auto& o : config.organs) {
    if (o.class_id >= 1 && o.class_id <= voxelio::kNumClasses)
      lookup[static_cast<std::size_t>(o.class_id)] = ct ? o.ct_mean : o.mr_mean;
  }
  double bone = ct ? config.ct_bone : config.mr_bone;
  double sigma = ct ? config.noise_sigma_ct : config.noise_sigma_mr;

  Rng rng(noise_seed);
  // Smooth bias field: bilinear interpolation of a 3x3 control grid.
  double ctrl[3][3];
  for (auto& row : ctrl)
    for (double& v : row) v = rng.uniform(-config.bias_amplitude, config.bias_amplitude);

  nn::Tensor img({map.rows, map.cols});
  for (int r = 0; r < map.rows; ++r) {
    double fy = map.rows > 1 ? 2.0 * r / (map.rows - 1) : 0.0;  // in [0,2]
    int y0 = std::min(1, static_cast<int>(fy));
    double ty = fy - y0;
    for (int c = 0; c < map.cols; ++c) {
      std::size_t idx = static_cast<std::size_t>(r) * map.cols + c;
      int label = map.labels[idx];
      if (label < 0 || label > voxelio::kNumClasses)
        throw std::invalid_argument("render_modality: invalid label " + std::to_string(label));
      double base = map.bone[idx] ? bone : lookup[static_cast<std::size_t>(label)];
      double fx = map.cols > 1 ? 2.0 * c / (map.cols - 1) : 0.0;
      int x0 = std::min(1, static_cast<int>(fx));
      double tx = fx - x0;
      double bias = (1 - ty) * ((1 - tx) * ctrl[y0][x0] + tx * ctrl[y0][x0 + 1]) +
                    ty * ((1 - tx) * ctrl[y0 + 1][x0] + tx * ctrl[y0 + 1][x0 + 1]);
      double noise = sigma > 0.0 ? rng.normal(0.0, sigma) : 0.0;
      img.at2(r, c) = base + bias + noise;
    }
  }
  return img;
}

PhantomCase generate_phantom_case(std::uint64_t seed, const PhantomConfig& config,
                                  const std::string& case_id, int case_index) {
  config.validate();
  const int n = config.image_size;
  Rng rng(seed);
  Rng case_rng = rng.child(static_cast<std::uint64_t>(case_index));

  PhantomCase out;
  out.clean = case_rng.uniform() < config.clean_fraction;
  out.maps.reserve(static_cast<std::size_t>(config.slices_per_case));
  for (int s = 0; s < config.slices_per_case; ++s) out.maps.push_back(empty_map(config));

  int next_instance = 1;
  for (const auto& organ : config.organs) {
    int budget = scheduled_instances(organ, config, seed, case_index);
    while (budget > 0) {
      int slice = case_rng.uniform_int(0, config.slices_per_case - 1);
      int group = std::min(budget, case_rng.uniform_int(organ.count_min, organ.count_max));
      for (int k = 0; k < group; ++k) {
        // Rejection-sample a free spot inside the ring.
        for (int attempt = 0; attempt < 40; ++attempt) {
          Shape sh;
          double major = case_rng.uniform(organ.size_min, organ.size_max) * n;
          double aspect = case_rng.uniform(organ.aspect_min, organ.aspect_max);
          sh.a = major;
          sh.b = std::max(1.2, major * aspect);
          sh.angle = case_rng.uniform(0.0, kPi);
          sh.capsule = organ.capsule;
          double margin = sh.max_extent() + 1.0;
          double rmax = 0.42 * n - margin;
          if (rmax <= 0) break;
          double rad = std::sqrt(case_rng.uniform()) * rmax;
          double theta = case_rng.uniform(0.0, 2.0 * kPi);
          sh.cx = 0.5 * n + rad * std::cos(theta);
          sh.cy = 0.5 * n + rad * std::sin(theta);
          if (try_paint(out.maps[static_cast<std::size_t>(slice)], sh, organ.class_id,
                        next_instance)) {
            ++next_instance;
            break;
          }
        }
        --budget;
      }
    }
  }

  out.ct = VolumeScan(config.slices_per_case, n, n, Modality::CT);
  out.mr = VolumeScan(config.slices_per_case, n, n, Modality::MR);
  out.labels = VolumeScan(config.slices_per_case, n, n, Modality::LABEL);
  out.ct.set_case_id(case_id);
  out.mr.set_case_id(case_id);
  out.labels.set_case_id(case_id);
  out.ct.set_spacing(5.0, 1.0, 1.0);
  out.mr.set_spacing(5.0, 1.0, 1.0);
  out.labels.set_spacing(5.0, 1.0, 1.0);

  out.annotations.case_id = case_id;
  for (int s = 0; s < config.slices_per_case; ++s) {
    const StructureMap& map = out.maps[static_cast<std::size_t>(s)];
    nn::Tensor ct_img = render_modality(map, Modality::CT, config, case_rng.bits());
    nn::Tensor mr_img = render_modality(map, Modality::MR, config, case_rng.bits());
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) {
        out.ct.at(s, r, c) = ct_img.at2(r, c);
        out.mr.at(s, r, c) = mr_img.at2(r, c);
        out.labels.at(s, r, c) = map.label_at(r, c);
      }

    // Instance annotations from the map, filtered by the standard rules.
    int max_id = 0;
    for (int id : map.instance_ids) max_id = std::max(max_id, id);
    for (int id = 1; id <= max_id; ++id) {
      voxelio::BinaryMask mask;
      mask.rows = mask.cols = n;
      mask.pixels.assign(static_cast<std::size_t>(n) * n, 0);
      int cls = 0;
      bool any = false;
      for (std::size_t i = 0; i < map.instance_ids.size(); ++i)
        if (map.instance_ids[i] == id) {
          mask.pixels[i] = 1;
          cls = map.labels[i];
          any = true;
        }
      if (!any) continue;
      auto res = voxelio::compute_instance_bbox(mask, cls, s);
      if (res.record) out.annotations.instances.push_back(std::move(*res.record));
    }
  }
  return out;
}

voxelio::DatasetIndex generate_phantom_corpus(const std::filesystem::path& out_dir,
                                              std::uint64_t seed, int cases,
                                              const PhantomConfig& config) {
  config.validate();
  std::filesystem::create_directories(out_dir);

  voxelio::DatasetIndex index;
  index.taxonomy = voxelio::class_names();
  std::vector<voxelio::CaseInstances> all_instances;

  for (int i = 0; i < cases; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "case_%04d", i);
    std::string id(buf);
    PhantomCase pc = generate_phantom_case(seed, config, id, i);

    voxelio::write_volume(out_dir / (id + "_ct.vol"), pc.ct);
    voxelio::write_volume(out_dir / (id + "_mr.vol"), pc.mr);
    voxelio::write_volume(out_dir / (id + "_labels.vol"), pc.labels);

    voxelio::CaseRecord rec;
    rec.id = id;
    rec.clean = pc.clean;
    rec.slices = config.slices_per_case;
    rec.ct_path = id + "_ct.vol";
    rec.mr_path = id + "_mr.vol";
    rec.labels_path = id + "_labels.vol";
    index.cases.push_back(rec);

    voxelio::CaseInstances ci;
    ci.case_id = id;
    ci.rows = ci.cols = config.image_size;
    ci.instances = pc.annotations.instances;
    all_instances.push_back(std::move(ci));
  }

  voxelio::write_dataset_index(out_dir / "dataset.json", index);
  voxelio::write_annotations(out_dir, all_instances);
  return index;
}

}  // namespace oar::phantoms
