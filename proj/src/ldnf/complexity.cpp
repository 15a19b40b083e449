#include "dmd/ldnf/complexity.hpp"

namespace dmd::ldnf {

Complexity count_params_madds(const BlockDesc& block) {
  if (block.empty()) throw InvalidInput("count_params_madds: empty block");
  Complexity c;
  for (const auto& l : block) {
    const auto& s = l.spec;
    if (l.out_h <= 0 || l.out_w <= 0 || s.in_channels <= 0 || s.out_channels <= 0 || s.kernel <= 0 ||
        s.groups <= 0 || s.in_channels % s.groups != 0 || s.out_channels % s.groups != 0) {
      throw InvalidInput("count_params_madds: layer '" + l.label + "' is not fully shaped");
    }
    const long long w = s.weight_count();
    c.params += w + (s.bias ? s.out_channels : 0) + (l.norm ? 2LL * s.out_channels : 0);
    c.madds += w * l.out_h * l.out_w;
  }
  return c;
}

BlockDesc fusion_block_desc(const RecognizerConfig& cfg) {
  const int m = cfg.msff_width(), k = cfg.final_size();
  return {
      {"conv1x1_reduce", nn::ConvSpec{2 * m, m, 1, 1, 0, 1, false}, k, k, true},
      {"conv3x3_grouped", nn::ConvSpec{m, m, 3, 1, 1, cfg.fusion_groups, false}, k, k, true},
      {"conv1x1_expand", nn::ConvSpec{m, 2 * m, 1, 1, 0, 1, false}, k, k, true},
  };
}

BlockDesc plain_fusion_desc(const RecognizerConfig& cfg) {
  const int m = cfg.msff_width(), k = cfg.final_size();
  return {{"conv3x3", nn::ConvSpec{2 * m, 2 * m, 3, 1, 1, 1, false}, k, k, true}};
}

BlockDesc describe_block(const std::string& name, const RecognizerConfig& cfg) {
  if (name == "fusion") return fusion_block_desc(cfg);
  if (name == "plain") return plain_fusion_desc(cfg);
  throw ConfigError("unknown block '" + name + "' (expected fusion or plain)");
}

}  // namespace dmd::ldnf
