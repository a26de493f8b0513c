#pragma once

#include <filesystem>
#include <memory>

#include "oar/losses/losses.hpp"
#include "oar/networks/layers.hpp"
#include "oar/networks/spec.hpp"
#include "oar/nn/checkpoint.hpp"

namespace oar::networks {

// UNet with stride-2 convolution encoder, skip connections at symmetric
// levels, and a nearest-neighbor-upsample + convolution decoder (transposed
// convolutions produce checkerboard artifacts, so they are not an option
// here). LeakyReLU + instance normalization throughout. The generator ends in
// tanh; the segmentation subnetwork emits raw class logits.
class UNet : public losses::PixelClassifier {
 public:
  UNet(const NetworkSpec& spec, Rng& init_rng);

  Node* forward(Graph& g, Node* x) override;

  const NetworkSpec& spec() const { return spec_; }
  std::vector<Param*> params() { return store_.all(); }

  // Encoder output channels per stage, shallowest first (e.g. 64,128,256).
  std::vector<int> encoder_channels() const;

 private:
  NetworkSpec spec_;
  ParamStore store_;
  std::vector<ConvBlock> encoder_;
  ConvBlock bottleneck_;
  struct DecoderStage {
    ConvBlock reduce;  // after upsample
    ConvBlock fuse;    // after skip concat
  };
  std::vector<DecoderStage> decoder_;
  ConvBlock top_;      // full-resolution block after the last upsample
  ConvLayer head_;     // linear output conv
};

// Fully-convolutional patch critic: stride-2 conv stack, score map output
// with spatial extent > 1. The raw head feeds the least-squares form; the
// log form applies a sigmoid on top.
class PatchDiscriminator {
 public:
  PatchDiscriminator(const NetworkSpec& spec, Rng& init_rng);

  Node* forward_raw(Graph& g, Node* x);   // score map
  Node* forward_prob(Graph& g, Node* x);  // sigmoid(score map)

  const NetworkSpec& spec() const { return spec_; }
  std::vector<Param*> params() { return store_.all(); }

 private:
  NetworkSpec spec_;
  ParamStore store_;
  std::vector<ConvBlock> blocks_;
  ConvLayer head_;
};

// Spec-driven builders.
std::unique_ptr<UNet> build_generator(const NetworkSpec& spec, Rng& init_rng);
std::unique_ptr<UNet> build_seg_subnetwork(const NetworkSpec& spec, Rng& init_rng);
std::unique_ptr<PatchDiscriminator> build_discriminator(const NetworkSpec& spec, Rng& init_rng);

// Checkpoint helpers shared by every module with a parameter list.
void save_params(const std::filesystem::path& path, const nlohmann::json& meta,
                 std::vector<Param*> params, nn::BlobDtype dtype);
void load_params(const nn::Checkpoint& ckpt, std::vector<Param*> params);

// FNV-1a over parameter bytes; used by the alternation/frozen-weight checks.
std::uint64_t params_hash(std::vector<Param*> params);

}  // namespace oar::networks
