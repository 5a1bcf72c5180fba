#include "bsrkit/model.hpp"

#include <fstream>

#include "bsrkit/bft.hpp"
#include "bsrkit/error.hpp"

namespace bsrkit {

Model Model::init(const DecoderConfig& cfg, FusionMode mode, std::uint64_t seed, bool zero_terminal) {
  cfg.validate();
  Model m;
  m.decoder_config = cfg;
  m.fusion_mode = mode;
  m.extractor = ExtractorParams::init(cfg.embed_dim, 3, seed);
  m.decoder = DecoderParams::init(cfg, seed + 1, zero_terminal);
  return m;
}

NamedTensors Model::named() const {
  NamedTensors out = extractor.named();
  for (auto& e : decoder.named()) out.push_back(std::move(e));
  return out;
}

Tensor Model::forward(const std::vector<Tensor>& frames) const {
  const FeatureStack fs = extract_features(frames, extractor);
  return decode(fuse(fs, fusion_mode, normalize_weights), frames.front(), decoder, decoder_config);
}

Image Model::superresolve(const Burst& burst) const {
  burst.validate();
  if (burst.scale != static_cast<int>(decoder_config.scale))
    throw ConfigError("burst scale " + std::to_string(burst.scale) + " does not match model scale " +
                      std::to_string(decoder_config.scale));
  std::vector<Tensor> frames;
  for (const auto& f : burst.frames) frames.push_back(f.to_tensor());
  return Image::from_tensor(forward(frames));
}

nlohmann::json Model::config_json() const {
  return {{"decoder", to_json(decoder_config)},
          {"fusion_mode", to_string(fusion_mode)},
          {"normalize_weights", normalize_weights}};
}

void save_checkpoint(const std::filesystem::path& dir, const Model& model, std::size_t step) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string());
  nlohmann::json params = nlohmann::json::array();
  for (const auto& [name, t] : model.named()) {
    const std::string file = name + ".bft";
    write_bft(t, dir / file);
    params.push_back({{"name", name}, {"file", file}, {"shape", t.shape()}});
  }
  const nlohmann::json manifest = {{"format", "bsrkit-checkpoint"},
                                   {"version", 1},
                                   {"step", step},
                                   {"config", model.config_json()},
                                   {"params", params}};
  std::ofstream f(dir / "manifest.json");
  if (!f) throw IoError("cannot write " + (dir / "manifest.json").string());
  f << manifest.dump(2) << "\n";
}

LoadedModel load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw IoError("missing manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "bsrkit-checkpoint" || manifest.value("version", 0) != 1)
    throw FormatError("unsupported checkpoint format in " + dir.string());
  LoadedModel out;
  try {
    const auto& cfg = manifest.at("config");
    out.model = Model::init(decoder_config_from_json(cfg.at("decoder")),
                            fusion_mode_from_string(cfg.at("fusion_mode").get<std::string>()), 0);
    out.model.normalize_weights = cfg.at("normalize_weights").get<bool>();
    out.step = manifest.at("step").get<std::size_t>();
    auto named = out.model.named();
    const auto& listed = manifest.at("params");
    if (listed.size() != named.size()) throw FormatError("checkpoint parameter count does not match its config");
    for (std::size_t i = 0; i < named.size(); ++i) {
      if (listed[i].at("name").get<std::string>() != named[i].first)
        throw FormatError("checkpoint parameter order mismatch at " + named[i].first);
      const Tensor t = read_bft(dir / listed[i].at("file").get<std::string>());
      if (t.shape() != named[i].second.shape()) throw FormatError("shape mismatch for " + named[i].first);
      auto dst = named[i].second.mutable_data();
      std::copy(t.data().begin(), t.data().end(), dst.begin());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  return out;
}

}  // namespace bsrkit
