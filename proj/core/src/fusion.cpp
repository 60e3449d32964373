#include "mmsf/fusion.hpp"

#include "mmsf/errors.hpp"

namespace mmsf::fusion {

FusionMode fusion_mode(const std::string& token) {
  if (token == "none") return FusionMode::None;
  if (token == "linear") return FusionMode::Linear;
  if (token == "se") return FusionMode::Se;
  throw ConfigError("unknown fusion mode '" + token + "' (expected none|linear|se)");
}

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::None: return "none";
    case FusionMode::Linear: return "linear";
    case FusionMode::Se: return "se";
  }
  return "se";
}

void FusionConfig::validate() const {
  if (reduction < 1) throw ConfigError("fusion reduction must be >= 1");
}

}  // namespace mmsf::fusion
