#include "knowcl/checkpoint.hpp"

#include <cstring>
#include <stdexcept>

#include "knowcl/io.hpp"

namespace knowcl {

namespace {

constexpr char kMagic[4] = {'K', 'N', 'C', 'L'};

}  // namespace

nlohmann::json to_json(const BackboneConfig& cfg) {
  return {
      {"variant", to_string(cfg.variant)},
      {"input_size", cfg.input_size},
      {"in_channels", cfg.in_channels},
      {"token_patch", cfg.token_patch},
      {"embed_dim", cfg.embed_dim},
      {"depth", cfg.depth},
      {"num_heads", cfg.num_heads},
      {"mlp_ratio", cfg.mlp_ratio},
      {"drop_path_rate", cfg.drop_path_rate},
      {"head_hidden", cfg.head_hidden},
      {"head_dropout", cfg.head_dropout},
      {"projection_dim", cfg.projection_dim},
  };
}

BackboneConfig backbone_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("backbone: expected an object");
  BackboneConfig cfg;
  if (j.contains("variant")) cfg = BackboneConfig::preset(variant_from_string(j.at("variant").get<std::string>()));
  for (const auto& [key, value] : j.items()) {
    if (key == "variant") continue;
    else if (key == "input_size") cfg.input_size = value.get<std::size_t>();
    else if (key == "in_channels") cfg.in_channels = value.get<std::size_t>();
    else if (key == "token_patch") cfg.token_patch = value.get<std::size_t>();
    else if (key == "embed_dim") cfg.embed_dim = value.get<std::size_t>();
    else if (key == "depth") cfg.depth = value.get<std::size_t>();
    else if (key == "num_heads") cfg.num_heads = value.get<std::size_t>();
    else if (key == "mlp_ratio") cfg.mlp_ratio = value.get<double>();
    else if (key == "drop_path_rate") cfg.drop_path_rate = value.get<double>();
    else if (key == "head_hidden") cfg.head_hidden = value.get<std::size_t>();
    else if (key == "head_dropout") cfg.head_dropout = value.get<double>();
    else if (key == "projection_dim") cfg.projection_dim = value.get<std::size_t>();
    else throw std::invalid_argument("backbone: unknown key \"" + key + "\"");
  }
  return cfg;
}

void save_checkpoint(const std::filesystem::path& path, Model& model) {
  nlohmann::json header;
  header["format"] = "knowcl-checkpoint";
  header["backbone"] = to_json(model.config);
  header["num_classes"] = model.num_classes;
  header["supervised"] = model.supervised.has_value();
  header["contrastive"] = model.contrastive.has_value();
  header["loss_weights"] = {model.loss_weights.value(0, 0), model.loss_weights.value(0, 1)};
  nlohmann::json params = nlohmann::json::array();
  const auto refs = model.parameters();
  for (const auto* p : refs) params.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  header["params"] = params;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  io::append_u32le(out, kCheckpointVersion);
  io::append_u64le(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto* p : refs) io::append_f32le(out, std::span<const float>(p->value.data(), p->size()));
  io::write_bytes(path, out);
}

Model load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_bytes(path);
  const std::string where = "checkpoint " + path.string();
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw std::runtime_error(where + ": not a checkpoint file");
  }
  const std::uint32_t version = io::decode_u32le(std::span(bytes).subspan(4, 4));
  if (version != kCheckpointVersion) {
    throw std::runtime_error(where + ": unsupported format version " + std::to_string(version));
  }
  const std::uint64_t len = io::decode_u64le(std::span(bytes).subspan(8, 8));
  if (16 + len > bytes.size()) throw std::runtime_error(where + ": truncated header");
  const auto header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));

  Model model = Model::create(backbone_config_from_json(header.at("backbone")), header.at("num_classes").get<int>(),
                              header.at("supervised").get<bool>(), header.at("contrastive").get<bool>(), 0);
  const auto refs = model.parameters();
  const auto& params = header.at("params");
  if (params.size() != refs.size()) throw std::runtime_error(where + ": parameter count mismatch");
  std::size_t offset = 16 + len;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    auto* p = refs[i];
    if (params[i].at("name").get<std::string>() != p->name || params[i].at("rows").get<Eigen::Index>() != p->value.rows() ||
        params[i].at("cols").get<Eigen::Index>() != p->value.cols()) {
      throw std::runtime_error(where + ": parameter " + std::to_string(i) + " (" + p->name + ") does not match");
    }
    const std::size_t n = p->size() * 4;
    if (offset + n > bytes.size()) throw std::runtime_error(where + ": truncated parameter data");
    const auto values = io::decode_f32le(std::span(bytes).subspan(offset, n));
    std::memcpy(p->value.data(), values.data(), n);
    offset += n;
  }
  if (offset != bytes.size()) throw std::runtime_error(where + ": trailing bytes");
  return model;
}

}  // namespace knowcl
