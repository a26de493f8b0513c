#include "oar/training/synthesis.hpp"

#include <algorithm>
#include <fstream>

#include "oar/common/csv.hpp"
#include "oar/losses/weights.hpp"
#include "oar/nn/optim.hpp"

namespace oar::training {

using losses::GanForm;
using losses::LossBreakdown;
using networks::PatchDiscriminator;
using networks::UNet;
using nn::Graph;
using nn::Node;
using nn::Param;

namespace {

constexpr std::uint64_t kSampleStream = 0x517cc1b727220a95ull;

struct SlicRef {
  const CaseData* data;
  int slice;
};

void prefix_params(std::vector<Param*> params, const std::string& prefix) {
  for (Param* p : params) p->name = prefix + p->name;
}

Tensor stack_images(const std::vector<Tensor>& imgs) {
  const std::int64_t H = imgs[0].dim(0), W = imgs[0].dim(1);
  Tensor out({static_cast<std::int64_t>(imgs.size()), 1, H, W});
  for (std::size_t b = 0; b < imgs.size(); ++b) {
    if (imgs[b].dim(0) != H || imgs[b].dim(1) != W)
      throw std::invalid_argument("train_synthesis: batch slices disagree in size");
    std::copy_n(imgs[b].data(), H * W, out.data() + static_cast<std::int64_t>(b) * H * W);
  }
  return out;
}

Tensor stack_labels(const std::vector<Tensor>& labels) {
  const std::int64_t H = labels[0].dim(0), W = labels[0].dim(1);
  Tensor out({static_cast<std::int64_t>(labels.size()), H, W});
  for (std::size_t b = 0; b < labels.size(); ++b)
    std::copy_n(labels[b].data(), H * W, out.data() + static_cast<std::int64_t>(b) * H * W);
  return out;
}

class SynthesisTrainer {
 public:
  SynthesisTrainer(const std::vector<CaseData>& cases, const SynthesisConfig& cfg)
      : cfg_(cfg) {
    // Disjoint unpaired pools: alternate cases (sorted by id upstream).
    std::vector<const CaseData*> sorted;
    for (const auto& c : cases) sorted.push_back(&c);
    std::sort(sorted.begin(), sorted.end(),
              [](const CaseData* a, const CaseData* b) { return a->id < b->id; });
    if (sorted.size() < 2)
      throw std::invalid_argument("train_synthesis: need at least two cases for disjoint pools");
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      const CaseData* c = sorted[i];
      if (i % 2 == 0)
        for (int s = 0; s < static_cast<int>(c->ct.size()); ++s) ct_pool_.push_back({c, s});
      else
        for (int s = 0; s < static_cast<int>(c->mr.size()); ++s) mr_pool_.push_back({c, s});
    }
    if (ct_pool_.empty() || mr_pool_.empty())
      throw std::invalid_argument("train_synthesis: empty sample pool");

    Rng init(cfg.seed);
    g_st_ = std::make_unique<UNet>(cfg.generator, init);
    g_ts_ = std::make_unique<UNet>(cfg.generator, init);
    d_t_ = std::make_unique<PatchDiscriminator>(cfg.discriminator, init);
    d_s_ = std::make_unique<PatchDiscriminator>(cfg.discriminator, init);
    subnet_ = std::make_unique<UNet>(cfg.seg_subnet, init);
    prefix_params(g_st_->params(), "g_st.");
    prefix_params(g_ts_->params(), "g_ts.");
    prefix_params(d_t_->params(), "d_t.");
    prefix_params(d_s_->params(), "d_s.");
    prefix_params(subnet_->params(), "subnet.");

    auto both_g = g_st_->params();
    for (Param* p : g_ts_->params()) both_g.push_back(p);
    opt_g_ = std::make_unique<nn::Adam>(both_g, cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
    opt_dt_ = std::make_unique<nn::Adam>(d_t_->params(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
    opt_ds_ = std::make_unique<nn::Adam>(d_s_->params(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
    opt_t_ = std::make_unique<nn::Adam>(subnet_->params(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2);

    // Median-frequency balancing over the CT pool's label maps.
    std::vector<Tensor> maps;
    for (const auto& ref : ct_pool_)
      maps.push_back(ref.data->labels[static_cast<std::size_t>(ref.slice)]);
    weights_ = losses::median_frequency_weights(maps, cfg.num_classes + 1);
  }

  int step() const { return step_; }

  std::vector<Param*> all_params() {
    std::vector<Param*> out = g_st_->params();
    for (Param* p : g_ts_->params()) out.push_back(p);
    for (Param* p : d_t_->params()) out.push_back(p);
    for (Param* p : d_s_->params()) out.push_back(p);
    for (Param* p : subnet_->params()) out.push_back(p);
    return out;
  }

  void save_state(const std::filesystem::path& path) {
    std::vector<std::pair<std::string, const Tensor*>> tensors;
    for (Param* p : all_params()) tensors.emplace_back(p->name, &p->value);
    auto add_slots = [&tensors](nn::Adam& opt) {
      for (auto& [name, t] : opt.state_tensors()) tensors.emplace_back(name, t);
    };
    add_slots(*opt_g_);
    add_slots(*opt_dt_);
    add_slots(*opt_ds_);
    add_slots(*opt_t_);
    nlohmann::json meta;
    meta["kind"] = "synthesis_state";
    meta["step"] = step_;
    meta["adam_t"] = {{"g", opt_g_->step_count()},
                      {"dt", opt_dt_->step_count()},
                      {"ds", opt_ds_->step_count()},
                      {"t", opt_t_->step_count()}};
    meta["seed"] = cfg_.seed;
    meta["config"] = cfg_.to_json();
    nn::save_checkpoint(path, meta, tensors, nn::BlobDtype::f64);
  }

  void restore(const std::filesystem::path& path) {
    auto ckpt = nn::load_checkpoint(path);
    if (ckpt.meta.value("kind", "") != "synthesis_state")
      throw std::runtime_error("restore: not a synthesis state checkpoint");
    for (Param* p : all_params()) p->value = ckpt.require(p->name);
    auto load_slots = [&ckpt](nn::Adam& opt) {
      for (auto& [name, t] : opt.state_tensors()) *t = ckpt.require(name);
    };
    load_slots(*opt_g_);
    load_slots(*opt_dt_);
    load_slots(*opt_ds_);
    load_slots(*opt_t_);
    step_ = ckpt.meta.at("step").get<int>();
    opt_g_->set_step_count(ckpt.meta["adam_t"]["g"].get<std::int64_t>());
    opt_dt_->set_step_count(ckpt.meta["adam_t"]["dt"].get<std::int64_t>());
    opt_ds_->set_step_count(ckpt.meta["adam_t"]["ds"].get<std::int64_t>());
    opt_t_->set_step_count(ckpt.meta["adam_t"]["t"].get<std::int64_t>());
  }

  void export_generators(const std::filesystem::path& path) {
    nlohmann::json meta;
    meta["kind"] = "generator_export";
    meta["generator"] = cfg_.generator.to_json();
    std::vector<std::pair<std::string, const Tensor*>> tensors;
    for (Param* p : g_st_->params()) tensors.emplace_back(p->name, &p->value);
    for (Param* p : g_ts_->params()) tensors.emplace_back(p->name, &p->value);
    nn::save_checkpoint(path, meta, tensors, nn::BlobDtype::f32);
  }

  StepRecord run_step() {
    Rng rng = Rng(cfg_.seed ^ kSampleStream).child(static_cast<std::uint64_t>(step_));
    const int B = cfg_.batch_size;

    std::vector<Tensor> xs_list, xt_list, label_list, mask_list;
    for (int b = 0; b < B; ++b) {
      const SlicRef& ct = ct_pool_[rng.uniform_index(ct_pool_.size())];
      const SlicRef& mr = mr_pool_[rng.uniform_index(mr_pool_.size())];
      Sample s;
      s.image = ct.data->ct[static_cast<std::size_t>(ct.slice)];
      s.labels = ct.data->labels[static_cast<std::size_t>(ct.slice)];
      Sample sa = augment(s, AugmentMode::synthesis, cfg_.augment, rng);
      Sample t;
      t.image = mr.data->mr[static_cast<std::size_t>(mr.slice)];
      Sample ta = augment(t, AugmentMode::synthesis, cfg_.augment, rng);
      xs_list.push_back(sa.image);
      label_list.push_back(sa.labels);
      xt_list.push_back(ta.image);
    }
    Tensor xs = stack_images(xs_list);
    Tensor xt = stack_images(xt_list);
    Tensor labels = stack_labels(label_list);
    Tensor organ_mask({labels.dim(0), 1, labels.dim(1), labels.dim(2)});
    for (std::int64_t i = 0; i < labels.numel(); ++i)
      organ_mask[i] = labels[i] > 0.0 ? 1.0 : 0.0;

    const bool log_form = cfg_.gan_form == GanForm::log_form;
    auto disc_out = [log_form](Graph& g, PatchDiscriminator& d, Node* x) {
      return log_form ? d.forward_prob(g, x) : d.forward_raw(g, x);
    };

    StepRecord rec;

    auto gen_params = [this]() {
      auto v = g_st_->params();
      for (Param* p : g_ts_->params()) v.push_back(p);
      return v;
    };
    auto disc_params = [this]() {
      auto v = d_t_->params();
      for (Param* p : d_s_->params()) v.push_back(p);
      return v;
    };

    // Fakes for the discriminator updates (no gradient back to generators).
    Tensor fake_t_const, fake_s_const;
    {
      Graph g;
      fake_t_const = g_st_->forward(g, g.input(xs))->val();
      fake_s_const = g_ts_->forward(g, g.input(xt))->val();
    }

    std::uint64_t gen_hash = networks::params_hash(gen_params());
    {  // target-domain discriminator
      Graph g;
      Node* real = disc_out(g, *d_t_, g.input(xt));
      Node* fake = disc_out(g, *d_t_, g.input(fake_t_const));
      Node* loss = log_form ? losses::gan_discriminator_loss_log(g, real, fake)
                            : losses::gan_discriminator_loss_ls(g, real, fake);
      rec.d_forward = loss->val()[0];
      opt_dt_->zero_grad();
      g.backward(loss);
      opt_dt_->step();
    }
    {  // source-domain discriminator
      Graph g;
      Node* real = disc_out(g, *d_s_, g.input(xs));
      Node* fake = disc_out(g, *d_s_, g.input(fake_s_const));
      Node* loss = log_form ? losses::gan_discriminator_loss_log(g, real, fake)
                            : losses::gan_discriminator_loss_ls(g, real, fake);
      rec.d_backward = loss->val()[0];
      opt_ds_->zero_grad();
      g.backward(loss);
      opt_ds_->step();
    }
    if (networks::params_hash(gen_params()) != gen_hash)
      throw std::logic_error("alternation violated: generators moved during discriminator step");

    std::uint64_t disc_hash = networks::params_hash(disc_params());
    Tensor fake_t_value;
    {  // both generators jointly
      Graph g;
      Node* xs_n = g.input(xs);
      Node* xt_n = g.input(xt);
      Node* fake_t = g_st_->forward(g, xs_n);
      Node* rec_s = g_ts_->forward(g, fake_t);
      Node* fake_s = g_ts_->forward(g, xt_n);
      Node* rec_t = g_st_->forward(g, fake_s);
      fake_t_value = fake_t->val();

      Node* adv_fwd = log_form
                          ? losses::gan_generator_loss_log(g, d_t_->forward_prob(g, fake_t))
                          : losses::gan_generator_loss_ls(g, d_t_->forward_raw(g, fake_t));
      Node* adv_bwd = log_form
                          ? losses::gan_generator_loss_log(g, d_s_->forward_prob(g, fake_s))
                          : losses::gan_generator_loss_ls(g, d_s_->forward_raw(g, fake_s));
      Node* content = losses::content_consistency_loss(g, rec_s, xs_n, rec_t, xt_n, &organ_mask);
      Node* task = losses::task_loss(g, fake_t, xs_n, labels, *subnet_, weights_);
      Node* total = losses::total_objective_node(g, adv_fwd, adv_bwd, content, task,
                                                 cfg_.lambda_content, cfg_.lambda_task);
      rec.breakdown =
          losses::total_objective(adv_fwd->val()[0], adv_bwd->val()[0], content->val()[0],
                                  task->val()[0], cfg_.lambda_content, cfg_.lambda_task);
      opt_g_->zero_grad();
      g.backward(total);
      opt_g_->step();
    }
    if (networks::params_hash(disc_params()) != disc_hash)
      throw std::logic_error("alternation violated: discriminators moved during generator step");

    if (cfg_.train_subnet) {  // segmentation subnetwork on detached synth
      Graph g;
      Node* joint = nn::concat_channels(g, g.input(xs), g.input(fake_t_value));
      Node* logits = subnet_->forward(g, joint);
      Node* loss = losses::weighted_cross_entropy(g, logits, labels, weights_);
      opt_t_->zero_grad();
      g.backward(loss);
      opt_t_->step();
    }

    ++step_;
    return rec;
  }

  const SynthesisConfig& cfg() const { return cfg_; }

 private:
  SynthesisConfig cfg_;
  std::vector<SlicRef> ct_pool_, mr_pool_;
  std::unique_ptr<UNet> g_st_, g_ts_, subnet_;
  std::unique_ptr<PatchDiscriminator> d_t_, d_s_;
  std::unique_ptr<nn::Adam> opt_g_, opt_dt_, opt_ds_, opt_t_;
  losses::ClassWeights weights_;
  int step_ = 0;
};

}  // namespace

SynthesisOutput train_synthesis(const std::vector<CaseData>& cases, const SynthesisConfig& cfg,
                                const std::filesystem::path& out_dir,
                                const std::filesystem::path& resume_from) {
  std::filesystem::create_directories(out_dir);
  SynthesisTrainer trainer(cases, cfg);
  if (!resume_from.empty()) trainer.restore(resume_from);

  SynthesisOutput out;
  out.state_checkpoint = out_dir / "state.ckpt";
  out.generator_export = out_dir / "generators.ckpt";
  out.log_path = out_dir / "train_log.csv";

  const bool fresh = resume_from.empty();
  std::ofstream log(out.log_path,
                    fresh ? std::ios::binary : (std::ios::binary | std::ios::app));
  if (!log) throw std::runtime_error("train_synthesis: cannot open log " + out.log_path.string());
  if (fresh) log << LossBreakdown::csv_header() << ",d_forward,d_backward\n";

  std::filesystem::path last_good;
  while (trainer.step() < cfg.steps) {
    StepRecord rec;
    try {
      rec = trainer.run_step();
    } catch (const std::invalid_argument& e) {
      throw TrainingDiverged(std::string("synthesis diverged at step ") +
                                 std::to_string(trainer.step()) + ": " + e.what(),
                             last_good);
    }
    if (!std::isfinite(rec.breakdown.total) || !std::isfinite(rec.d_forward) ||
        !std::isfinite(rec.d_backward))
      throw TrainingDiverged(
          "synthesis diverged at step " + std::to_string(trainer.step()), last_good);

    log << rec.breakdown.csv_row(trainer.step() - 1) << ',' << fmt_double(rec.d_forward) << ','
        << fmt_double(rec.d_backward) << '\n';
    out.history.push_back(rec);

    if (cfg.checkpoint_every > 0 && trainer.step() % cfg.checkpoint_every == 0) {
      trainer.save_state(out.state_checkpoint);
      trainer.export_generators(out.generator_export);
      last_good = out.state_checkpoint;
    }
  }
  log.flush();
  trainer.save_state(out.state_checkpoint);
  trainer.export_generators(out.generator_export);
  return out;
}

GeneratorPair load_generators(const std::filesystem::path& checkpoint_path) {
  auto ckpt = nn::load_checkpoint(checkpoint_path);
  std::string kind = ckpt.meta.value("kind", "");
  nlohmann::json spec_json;
  if (kind == "generator_export")
    spec_json = ckpt.meta.at("generator");
  else if (kind == "synthesis_state")
    spec_json = ckpt.meta.at("config").at("generator");
  else
    throw std::runtime_error("load_generators: unsupported checkpoint kind '" + kind + "'");

  auto spec = networks::NetworkSpec::from_json(spec_json);
  GeneratorPair pair;
  Rng init(0);
  pair.source_to_target = std::make_unique<UNet>(spec, init);
  pair.target_to_source = std::make_unique<UNet>(spec, init);
  for (Param* p : pair.source_to_target->params()) p->name = "g_st." + p->name;
  for (Param* p : pair.target_to_source->params()) p->name = "g_ts." + p->name;
  networks::load_params(ckpt, pair.source_to_target->params());
  networks::load_params(ckpt, pair.target_to_source->params());
  return pair;
}

Tensor synthesize_slice(networks::UNet& generator, const Tensor& slice) {
  Graph g;
  Node* out = generator.forward(g, g.input(slice.reshaped({1, 1, slice.dim(0), slice.dim(1)})));
  return out->val().reshaped({slice.dim(0), slice.dim(1)});
}

}  // namespace oar::training
