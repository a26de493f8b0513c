#include "oar/training/config.hpp"

namespace oar::training {

nlohmann::json PreprocessConfig::to_json() const {
  return {{"crop", crop},
          {"resize", resize},
          {"ct_window", {ct_window.lo, ct_window.hi}},
          {"mr_window", {mr_window.lo, mr_window.hi}}};
}

PreprocessConfig PreprocessConfig::from_json(const nlohmann::json& j) {
  PreprocessConfig c;
  c.crop = j.value("crop", c.crop);
  c.resize = j.value("resize", c.resize);
  if (j.contains("ct_window")) {
    c.ct_window.lo = j["ct_window"][0];
    c.ct_window.hi = j["ct_window"][1];
  }
  if (j.contains("mr_window")) {
    c.mr_window.lo = j["mr_window"][0];
    c.mr_window.hi = j["mr_window"][1];
  }
  return c;
}

PreprocessConfig PreprocessConfig::desk() {
  PreprocessConfig c;
  c.crop = 64;
  c.resize = 64;
  c.ct_window = {0.0, 250.0};   // phantom raw units; bone saturates
  c.mr_window = {0.0, 800.0};
  return c;
}

nlohmann::json AugmentConfig::to_json() const {
  return {{"flip", flip}, {"random_crop", random_crop}, {"jitter_sizes", jitter_sizes}};
}

AugmentConfig AugmentConfig::from_json(const nlohmann::json& j) {
  AugmentConfig c;
  c.flip = j.value("flip", c.flip);
  c.random_crop = j.value("random_crop", c.random_crop);
  c.jitter_sizes = j.value("jitter_sizes", c.jitter_sizes);
  return c;
}

SynthesisConfig::SynthesisConfig() {
  generator.kind = networks::NetworkKind::generator;
  discriminator.kind = networks::NetworkKind::discriminator;
  discriminator.base_channels = 64;
  seg_subnet.kind = networks::NetworkKind::seg_subnet;
  seg_subnet.in_channels = 2;
  seg_subnet.out_channels = num_classes + 1;
  seg_subnet.base_channels = 64;
}

nlohmann::json SynthesisConfig::to_json() const {
  return {{"steps", steps},
          {"lr", lr},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"batch_size", batch_size},
          {"lambda_content", lambda_content},
          {"lambda_task", lambda_task},
          {"gan_form", gan_form == losses::GanForm::log_form ? "log" : "least_squares"},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every},
          {"num_classes", num_classes},
          {"train_subnet", train_subnet},
          {"generator", generator.to_json()},
          {"discriminator", discriminator.to_json()},
          {"seg_subnet", seg_subnet.to_json()},
          {"augment", augment.to_json()}};
}

SynthesisConfig SynthesisConfig::from_json(const nlohmann::json& j) {
  SynthesisConfig c;
  c.steps = j.value("steps", c.steps);
  c.lr = j.value("lr", c.lr);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lambda_content = j.value("lambda_content", c.lambda_content);
  c.lambda_task = j.value("lambda_task", c.lambda_task);
  std::string form = j.value("gan_form", "least_squares");
  c.gan_form = form == "log" ? losses::GanForm::log_form : losses::GanForm::least_squares;
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.train_subnet = j.value("train_subnet", c.train_subnet);
  if (j.contains("generator")) c.generator = networks::NetworkSpec::from_json(j["generator"]);
  if (j.contains("discriminator"))
    c.discriminator = networks::NetworkSpec::from_json(j["discriminator"]);
  if (j.contains("seg_subnet")) c.seg_subnet = networks::NetworkSpec::from_json(j["seg_subnet"]);
  if (j.contains("augment")) c.augment = AugmentConfig::from_json(j["augment"]);
  return c;
}

SynthesisConfig SynthesisConfig::desk() {
  SynthesisConfig c;
  c.generator.base_channels = 8;
  c.discriminator.base_channels = 8;
  c.seg_subnet.base_channels = 8;
  c.steps = 500;
  return c;
}

nlohmann::json SegTrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"lr_start", lr_start},
          {"lr_peak", lr_peak},
          {"warmup_epochs", warmup_epochs},
          {"decay_epochs", decay_epochs},
          {"decay_factor", decay_factor},
          {"momentum", momentum},
          {"seed", seed},
          {"cache_synth", cache_synth},
          {"detector", detector.to_json()},
          {"augment", augment.to_json()}};
}

SegTrainConfig SegTrainConfig::from_json(const nlohmann::json& j) {
  SegTrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.lr_start = j.value("lr_start", c.lr_start);
  c.lr_peak = j.value("lr_peak", c.lr_peak);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.decay_epochs = j.value("decay_epochs", c.decay_epochs);
  c.decay_factor = j.value("decay_factor", c.decay_factor);
  c.momentum = j.value("momentum", c.momentum);
  c.seed = j.value("seed", c.seed);
  c.cache_synth = j.value("cache_synth", c.cache_synth);
  if (j.contains("detector")) c.detector = networks::DetectorConfig::from_json(j["detector"]);
  if (j.contains("augment")) c.augment = AugmentConfig::from_json(j["augment"]);
  return c;
}

SegTrainConfig SegTrainConfig::desk() {
  SegTrainConfig c;
  c.epochs = 12;
  c.detector.base_channels = 12;
  c.detector.roi_batch = 64;
  c.detector.rpn_batch = 48;
  c.detector.head_width = 96;
  c.detector.mask_channels = 16;
  c.augment.jitter_sizes = {56, 64, 72};
  return c;
}

double lr_schedule(double epoch_fraction, const SegTrainConfig& cfg) {
  if (epoch_fraction < 0.0) throw std::invalid_argument("lr_schedule: negative epoch fraction");
  if (epoch_fraction < cfg.warmup_epochs)
    return cfg.lr_start + (epoch_fraction / cfg.warmup_epochs) * (cfg.lr_peak - cfg.lr_start);
  double lr = cfg.lr_peak;
  for (double at : cfg.decay_epochs)
    if (epoch_fraction >= at) lr *= cfg.decay_factor;
  return lr;
}

SemanticTrainConfig::SemanticTrainConfig() {
  net.kind = networks::NetworkKind::seg_subnet;
  net.in_channels = 1;
  net.out_channels = num_classes + 1;
  net.base_channels = 64;
}

nlohmann::json SemanticTrainConfig::to_json() const {
  return {{"steps", steps},       {"lr", lr},
          {"weighted", weighted}, {"seed", seed},
          {"num_classes", num_classes}, {"net", net.to_json()},
          {"augment", augment.to_json()}};
}

SemanticTrainConfig SemanticTrainConfig::from_json(const nlohmann::json& j) {
  SemanticTrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.lr = j.value("lr", c.lr);
  c.weighted = j.value("weighted", c.weighted);
  c.seed = j.value("seed", c.seed);
  c.num_classes = j.value("num_classes", c.num_classes);
  if (j.contains("net")) c.net = networks::NetworkSpec::from_json(j["net"]);
  if (j.contains("augment")) c.augment = AugmentConfig::from_json(j["augment"]);
  return c;
}

SemanticTrainConfig SemanticTrainConfig::desk() {
  SemanticTrainConfig c;
  c.net.base_channels = 8;
  c.steps = 400;
  return c;
}

}  // namespace oar::training
