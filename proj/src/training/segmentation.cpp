#include "oar/training/segmentation.hpp"

#include <cmath>
#include <fstream>

#include "oar/common/csv.hpp"
#include "oar/losses/weights.hpp"
#include "oar/nn/optim.hpp"
#include "oar/training/synthesis.hpp"

namespace oar::training {

using networks::FusionScheme;
using networks::InstanceSegmentor;
using networks::UNet;
using nn::Graph;
using nn::Node;
using nn::Param;

namespace {

constexpr std::uint64_t kSegStream = 0x94d049bb133111ebull;

struct SliceRef {
  const CaseData* data;
  int slice;
};

void save_detector_state(const std::filesystem::path& path, InstanceSegmentor& det,
                         nn::SgdMomentum& opt, const SegTrainConfig& cfg, int completed_epochs) {
  std::vector<std::pair<std::string, const nn::Tensor*>> tensors;
  for (Param* p : det.params()) tensors.emplace_back(p->name, &p->value);
  for (auto& [name, t] : opt.state_tensors()) tensors.emplace_back(name, t);
  nlohmann::json meta;
  meta["kind"] = "detector_state";
  meta["completed_epochs"] = completed_epochs;
  meta["config"] = cfg.to_json();
  nn::save_checkpoint(path, meta, tensors, nn::BlobDtype::f64);
}

}  // namespace

SegOutput train_segmentation(const std::vector<CaseData>& train_set,
                             const std::vector<CaseData>& val_set, UNet* frozen_generator,
                             const SegTrainConfig& cfg, const std::filesystem::path& out_dir,
                             const std::filesystem::path& resume_from) {
  std::filesystem::create_directories(out_dir);
  const FusionScheme fusion = cfg.detector.fusion;
  if (fusion != FusionScheme::none && frozen_generator == nullptr)
    throw std::invalid_argument("train_segmentation: fusion requested without a generator");

  std::vector<SliceRef> slices;
  for (const auto& c : train_set)
    for (int s = 0; s < static_cast<int>(c.ct.size()); ++s) slices.push_back({&c, s});
  if (slices.empty()) throw std::invalid_argument("train_segmentation: empty training set");
  const int n = static_cast<int>(slices.size());

  Rng init(cfg.seed);
  InstanceSegmentor detector(cfg.detector, init);
  nn::SgdMomentum opt(detector.params(), cfg.lr_start, cfg.momentum);

  int start_epoch = 0;
  if (!resume_from.empty()) {
    auto ckpt = nn::load_checkpoint(resume_from);
    if (ckpt.meta.value("kind", "") != "detector_state")
      throw std::runtime_error("train_segmentation: not a detector state checkpoint");
    for (Param* p : detector.params()) p->value = ckpt.require(p->name);
    for (auto& [name, t] : opt.state_tensors()) *t = ckpt.require(name);
    start_epoch = ckpt.meta.at("completed_epochs").get<int>();
  }

  // Frozen-generator contract: the hash must not move during training.
  std::uint64_t generator_hash =
      frozen_generator ? networks::params_hash(frozen_generator->params()) : 0;

  // Synthesized companion per training slice, generated once from the
  // unaugmented CT (augmentation then transforms both images together).
  std::vector<Tensor> synth_cache(slices.size());
  std::vector<bool> synth_ready(slices.size(), false);
  auto companion_for = [&](int idx) -> Tensor {
    if (fusion == FusionScheme::none) return Tensor();
    if (!cfg.cache_synth || !synth_ready[static_cast<std::size_t>(idx)]) {
      const SliceRef& ref = slices[static_cast<std::size_t>(idx)];
      Tensor s = synthesize_slice(*frozen_generator,
                                  ref.data->ct[static_cast<std::size_t>(ref.slice)]);
      if (!cfg.cache_synth) return s;
      synth_cache[static_cast<std::size_t>(idx)] = std::move(s);
      synth_ready[static_cast<std::size_t>(idx)] = true;
    }
    return synth_cache[static_cast<std::size_t>(idx)];
  };

  SegOutput out;
  out.checkpoint = out_dir / "detector.ckpt";
  out.log_path = out_dir / "train_log.csv";
  out.val_dice_path = out_dir / "val_dice.csv";

  const bool fresh = resume_from.empty();
  std::ofstream log(out.log_path, fresh ? std::ios::binary : (std::ios::binary | std::ios::app));
  std::ofstream val_log(out.val_dice_path,
                        fresh ? std::ios::binary : (std::ios::binary | std::ios::app));
  if (fresh) {
    log << "epoch_fraction,lr,rpn_objectness,rpn_box,classification,box_regression,mask,total,"
           "sampled_pos,sampled_neg\n";
    val_log << "epoch,class,dice\n";
  }

  const int total_epochs = static_cast<int>(std::ceil(cfg.epochs));
  for (int epoch = start_epoch; epoch < total_epochs; ++epoch) {
    Rng perm_rng = Rng(cfg.seed ^ kSegStream).child(static_cast<std::uint64_t>(epoch));
    std::vector<int> order = perm_rng.permutation(n);
    for (int k = 0; k < n; ++k) {
      double epoch_fraction = epoch + static_cast<double>(k) / n;
      double lr = lr_schedule(epoch_fraction, cfg);
      opt.set_lr(lr);

      int idx = order[static_cast<std::size_t>(k)];
      const SliceRef& ref = slices[static_cast<std::size_t>(idx)];
      Sample sample;
      sample.image = ref.data->ct[static_cast<std::size_t>(ref.slice)];
      sample.companion = companion_for(idx);
      sample.instances = ref.data->instances[static_cast<std::size_t>(ref.slice)];

      Rng step_rng = Rng(cfg.seed ^ kSegStream)
                         .child(0x10000000ull + static_cast<std::uint64_t>(epoch) *
                                                    static_cast<std::uint64_t>(n) +
                                static_cast<std::uint64_t>(k));
      Sample aug = augment(sample, AugmentMode::segmentation, cfg.augment, step_rng);

      networks::FusedInput input =
          fusion == FusionScheme::none
              ? networks::ct_only_input(aug.image)
              : networks::fuse_inputs(aug.image, aug.companion, fusion);

      Graph g;
      auto losses = detector.training_losses(g, input, aug.instances, step_rng);
      if (!std::isfinite(losses.total->val()[0]))
        throw TrainingDiverged("segmentation diverged at epoch " + std::to_string(epoch),
                               out.checkpoint);
      opt.zero_grad();
      g.backward(losses.total);
      opt.step();

      log << fmt_double(epoch_fraction) << ',' << fmt_double(lr) << ','
          << fmt_double(losses.rpn_objectness) << ',' << fmt_double(losses.rpn_box) << ','
          << fmt_double(losses.classification) << ',' << fmt_double(losses.box_regression) << ','
          << fmt_double(losses.mask) << ',' << fmt_double(losses.total->val()[0]) << ','
          << losses.sampled_pos << ',' << losses.sampled_neg << '\n';
    }

    // per-epoch validation dice
    std::map<int, double> epoch_dice;
    if (!val_set.empty()) {
      auto predictor = [&](const CaseData& data, int s) {
        Tensor ct = data.ct[static_cast<std::size_t>(s)];
        networks::FusedInput input =
            fusion == FusionScheme::none
                ? networks::ct_only_input(ct)
                : networks::fuse_inputs(ct, synthesize_slice(*frozen_generator, ct), fusion);
        return detector.infer(input);
      };
      auto report = eval::evaluate_instance(predictor, val_set, cfg.detector.num_classes,
                                            cfg.detector.score_thresh);
      for (const auto& c : report.classes) {
        if (c.absent) continue;
        epoch_dice[c.class_id] = c.mean_dice;
        val_log << epoch << ',' << c.class_id << ',' << fmt_double(c.mean_dice) << '\n';
      }
    }
    out.val_dice_history.push_back(std::move(epoch_dice));

    save_detector_state(out.checkpoint, detector, opt, cfg, epoch + 1);
  }
  log.flush();
  val_log.flush();

  if (frozen_generator &&
      networks::params_hash(frozen_generator->params()) != generator_hash)
    throw std::logic_error("train_segmentation: frozen generator was modified");

  save_detector_state(out.checkpoint, detector, opt, cfg, total_epochs);
  return out;
}

std::unique_ptr<InstanceSegmentor> load_detector(const std::filesystem::path& checkpoint_path) {
  auto ckpt = nn::load_checkpoint(checkpoint_path);
  if (ckpt.meta.value("kind", "") != "detector_state")
    throw std::runtime_error("load_detector: unsupported checkpoint kind");
  auto cfg = SegTrainConfig::from_json(ckpt.meta.at("config"));
  Rng init(cfg.seed);
  auto det = std::make_unique<InstanceSegmentor>(cfg.detector, init);
  networks::load_params(ckpt, det->params());
  return det;
}

SemanticOutput train_semantic(const std::vector<CaseData>& train_set,
                              const SemanticTrainConfig& cfg) {
  std::vector<SliceRef> slices;
  for (const auto& c : train_set)
    for (int s = 0; s < static_cast<int>(c.ct.size()); ++s) slices.push_back({&c, s});
  if (slices.empty()) throw std::invalid_argument("train_semantic: empty training set");

  SemanticOutput out;
  Rng init(cfg.seed);
  out.net = std::make_unique<UNet>(cfg.net, init);

  if (cfg.weighted) {
    std::vector<Tensor> maps;
    for (const auto& ref : slices)
      maps.push_back(ref.data->labels[static_cast<std::size_t>(ref.slice)]);
    out.weights = losses::median_frequency_weights(maps, cfg.num_classes + 1);
  } else {
    out.weights = losses::ClassWeights::uniform(cfg.num_classes + 1);
  }

  nn::Adam opt(out.net->params(), cfg.lr, 0.9, 0.999);
  for (int step = 0; step < cfg.steps; ++step) {
    Rng rng = Rng(cfg.seed ^ 0x2545f4914f6cdd1dull).child(static_cast<std::uint64_t>(step));
    const SliceRef& ref = slices[rng.uniform_index(slices.size())];
    Sample sample;
    sample.image = ref.data->ct[static_cast<std::size_t>(ref.slice)];
    sample.labels = ref.data->labels[static_cast<std::size_t>(ref.slice)];
    Sample aug = augment(sample, AugmentMode::synthesis, cfg.augment, rng);

    Graph g;
    Node* x = g.input(aug.image.reshaped({1, 1, aug.image.dim(0), aug.image.dim(1)}));
    Node* logits = out.net->forward(g, x);
    Node* loss = losses::weighted_cross_entropy(
        g, logits, aug.labels.reshaped({1, aug.labels.dim(0), aug.labels.dim(1)}), out.weights);
    out.loss_history.push_back(loss->val()[0]);
    opt.zero_grad();
    g.backward(loss);
    opt.step();
  }
  return out;
}

Tensor semantic_predict(UNet& net, const Tensor& slice) {
  Graph g;
  Node* logits =
      net.forward(g, g.input(slice.reshaped({1, 1, slice.dim(0), slice.dim(1)})));
  const Tensor& z = logits->val();
  const std::int64_t C = z.dim(1), plane = z.dim(2) * z.dim(3);
  Tensor pred({slice.dim(0), slice.dim(1)});
  for (std::int64_t i = 0; i < plane; ++i) {
    int best = 0;
    double best_v = z[i];
    for (std::int64_t c = 1; c < C; ++c)
      if (z[c * plane + i] > best_v) {
        best_v = z[c * plane + i];
        best = static_cast<int>(c);
      }
    pred[i] = static_cast<double>(best);
  }
  return pred;
}

}  // namespace oar::training
