#include "oar/networks/unet.hpp"

#include <stdexcept>

namespace oar::networks {

UNet::UNet(const NetworkSpec& spec, Rng& init_rng) : spec_(spec) {
  spec_.validate();
  if (spec_.kind != NetworkKind::generator && spec_.kind != NetworkKind::seg_subnet)
    throw std::invalid_argument("UNet: spec kind must be generator or seg_subnet");
  bool norm = spec_.norm == NormMode::instance;
  double slope = spec_.leaky_slope;

  // Replicate padding: no zero border injected, so constant inputs stay
  // constant through the whole stack (this is what keeps the stride-lattice
  // spectrum clean at initialization).
  const nn::PadMode pm = nn::PadMode::replicate;

  int ch = spec_.base_channels;
  int in = spec_.in_channels;
  for (int d = 0; d < spec_.depth; ++d) {
    int out = ch << d;
    encoder_.push_back(make_block(store_, "enc" + std::to_string(d),
                                  d == 0 ? in : ch << (d - 1), out, 2, slope, norm, init_rng, pm));
  }
  int deep = ch << (spec_.depth - 1);
  bottleneck_ = make_block(store_, "bottleneck", deep, deep, 1, slope, norm, init_rng, pm);

  for (int d = spec_.depth - 1; d >= 1; --d) {
    DecoderStage stage;
    int cur = ch << d;
    int half = ch << (d - 1);
    stage.reduce = make_block(store_, "dec" + std::to_string(d) + ".reduce", cur, half, 1, slope,
                              norm, init_rng, pm);
    stage.fuse = make_block(store_, "dec" + std::to_string(d) + ".fuse", 2 * half, half, 1, slope,
                            norm, init_rng, pm);
    decoder_.push_back(stage);
  }
  top_ = make_block(store_, "top", ch, ch, 1, slope, norm, init_rng, pm);
  head_ = make_conv(store_, "head", ch, spec_.out_channels, 3, 1, 1, slope, init_rng, true, pm);
}

std::vector<int> UNet::encoder_channels() const {
  std::vector<int> chans;
  for (int d = 0; d < spec_.depth; ++d) chans.push_back(spec_.base_channels << d);
  return chans;
}

Node* UNet::forward(Graph& g, Node* x) {
  const Tensor& xv = x->val();
  if (xv.ndim() != 4 || xv.dim(1) != spec_.in_channels)
    throw std::invalid_argument("UNet: expected input [N," + std::to_string(spec_.in_channels) +
                                ",H,W], got " + xv.shape_str());
  std::int64_t factor = 1 << spec_.depth;
  if (xv.dim(2) % factor != 0 || xv.dim(3) % factor != 0)
    throw std::invalid_argument("UNet: input size " + xv.shape_str() + " not divisible by " +
                                std::to_string(factor));

  std::vector<Node*> skips;
  Node* h = x;
  for (const auto& block : encoder_) {
    h = block.forward(g, h);
    skips.push_back(h);
  }
  h = bottleneck_.forward(g, h);

  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    const auto& stage = decoder_[i];
    h = nn::nearest_upsample2x(g, h);
    h = stage.reduce.forward(g, h);
    Node* skip = skips[skips.size() - 2 - i];
    h = nn::concat_channels(g, h, skip);
    h = stage.fuse.forward(g, h);
  }
  h = nn::nearest_upsample2x(g, h);
  h = top_.forward(g, h);
  h = head_.forward(g, h);
  if (spec_.kind == NetworkKind::generator) h = nn::tanh_act(g, h);
  return h;
}

PatchDiscriminator::PatchDiscriminator(const NetworkSpec& spec, Rng& init_rng) : spec_(spec) {
  spec_.validate();
  if (spec_.kind != NetworkKind::discriminator)
    throw std::invalid_argument("PatchDiscriminator: spec kind must be discriminator");
  bool norm = spec_.norm == NormMode::instance;
  int ch = spec_.base_channels;
  for (int d = 0; d < spec_.depth; ++d) {
    int in = d == 0 ? spec_.in_channels : ch << (d - 1);
    blocks_.push_back(make_block(store_, "disc" + std::to_string(d), in, ch << d, 2,
                                 spec_.leaky_slope, norm, init_rng));
  }
  head_ = make_conv(store_, "head", ch << (spec_.depth - 1), 1, 3, 1, 1, spec_.leaky_slope,
                    init_rng);
}

Node* PatchDiscriminator::forward_raw(Graph& g, Node* x) {
  const Tensor& xv = x->val();
  std::int64_t factor = 1 << spec_.depth;
  if (xv.dim(2) % factor != 0 || xv.dim(3) % factor != 0)
    throw std::invalid_argument("PatchDiscriminator: input size not divisible by " +
                                std::to_string(factor));
  Node* h = x;
  for (const auto& block : blocks_) h = block.forward(g, h);
  return head_.forward(g, h);
}

Node* PatchDiscriminator::forward_prob(Graph& g, Node* x) {
  return nn::sigmoid_act(g, forward_raw(g, x));
}

std::unique_ptr<UNet> build_generator(const NetworkSpec& spec, Rng& init_rng) {
  if (spec.kind != NetworkKind::generator)
    throw std::invalid_argument("build_generator: wrong spec kind");
  return std::make_unique<UNet>(spec, init_rng);
}

std::unique_ptr<UNet> build_seg_subnetwork(const NetworkSpec& spec, Rng& init_rng) {
  if (spec.kind != NetworkKind::seg_subnet)
    throw std::invalid_argument("build_seg_subnetwork: wrong spec kind");
  return std::make_unique<UNet>(spec, init_rng);
}

std::unique_ptr<PatchDiscriminator> build_discriminator(const NetworkSpec& spec, Rng& init_rng) {
  if (spec.kind != NetworkKind::discriminator)
    throw std::invalid_argument("build_discriminator: wrong spec kind");
  return std::make_unique<PatchDiscriminator>(spec, init_rng);
}

void save_params(const std::filesystem::path& path, const nlohmann::json& meta,
                 std::vector<Param*> params, nn::BlobDtype dtype) {
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  tensors.reserve(params.size());
  for (Param* p : params) tensors.emplace_back(p->name, &p->value);
  nn::save_checkpoint(path, meta, tensors, dtype);
}

void load_params(const nn::Checkpoint& ckpt, std::vector<Param*> params) {
  for (Param* p : params) {
    const Tensor& t = ckpt.require(p->name);
    if (!t.same_shape(p->value))
      throw std::runtime_error("load_params: shape mismatch for " + p->name + ": checkpoint " +
                               t.shape_str() + " vs model " + p->value.shape_str());
    p->value = t;
  }
}

std::uint64_t params_hash(std::vector<Param*> params) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const std::uint8_t*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  };
  for (Param* p : params)
    mix(p->value.data(), static_cast<std::size_t>(p->value.numel()) * sizeof(double));
  return h;
}

}  // namespace oar::networks
