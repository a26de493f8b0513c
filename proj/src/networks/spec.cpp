#include "oar/networks/spec.hpp"

#include <stdexcept>

namespace oar::networks {

std::string to_string(NetworkKind k) {
  switch (k) {
    case NetworkKind::generator: return "generator";
    case NetworkKind::discriminator: return "discriminator";
    case NetworkKind::seg_subnet: return "seg_subnet";
    case NetworkKind::instance_seg: return "instance_seg";
  }
  return "generator";
}

NetworkKind kind_from_string(const std::string& s) {
  if (s == "generator") return NetworkKind::generator;
  if (s == "discriminator") return NetworkKind::discriminator;
  if (s == "seg_subnet") return NetworkKind::seg_subnet;
  if (s == "instance_seg") return NetworkKind::instance_seg;
  throw std::invalid_argument("unknown network kind: " + s);
}

void NetworkSpec::validate() const {
  if (depth < 1) throw std::invalid_argument("NetworkSpec: depth must be >= 1");
  if (base_channels < 1) throw std::invalid_argument("NetworkSpec: base_channels must be >= 1");
  if (in_channels < 1 || out_channels < 1)
    throw std::invalid_argument("NetworkSpec: channel counts must be >= 1");
}

nlohmann::json NetworkSpec::to_json() const {
  return {{"kind", to_string(kind)},
          {"in_channels", in_channels},
          {"out_channels", out_channels},
          {"base_channels", base_channels},
          {"depth", depth},
          {"upsample", "nearest"},
          {"norm", norm == NormMode::instance ? "instance" : "none"},
          {"leaky_slope", leaky_slope}};
}

NetworkSpec NetworkSpec::from_json(const nlohmann::json& j) {
  NetworkSpec s;
  s.kind = kind_from_string(j.value("kind", "generator"));
  s.in_channels = j.value("in_channels", 1);
  s.out_channels = j.value("out_channels", 1);
  s.base_channels = j.value("base_channels", 64);
  s.depth = j.value("depth", 3);
  std::string up = j.value("upsample", "nearest");
  if (up != "nearest") throw std::invalid_argument("NetworkSpec: unsupported upsample " + up);
  std::string norm = j.value("norm", "instance");
  s.norm = norm == "none" ? NormMode::none : NormMode::instance;
  s.leaky_slope = j.value("leaky_slope", 0.2);
  s.validate();
  return s;
}

}  // namespace oar::networks
