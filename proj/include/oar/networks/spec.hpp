#pragma once

#include <string>

#include <json.hpp>

namespace oar::networks {

enum class NetworkKind { generator, discriminator, seg_subnet, instance_seg };
enum class UpsampleMode { nearest };  // transposed conv deliberately unsupported
enum class NormMode { instance, none };

std::string to_string(NetworkKind k);
NetworkKind kind_from_string(const std::string& s);

struct NetworkSpec {
  NetworkKind kind = NetworkKind::generator;
  int in_channels = 1;
  int out_channels = 1;
  int base_channels = 64;
  int depth = 3;  // stride-2 stages
  UpsampleMode upsample = UpsampleMode::nearest;
  NormMode norm = NormMode::instance;
  double leaky_slope = 0.2;

  void validate() const;

  nlohmann::json to_json() const;
  static NetworkSpec from_json(const nlohmann::json& j);
};

}  // namespace oar::networks
