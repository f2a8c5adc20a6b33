#include "pnnunet/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>

namespace pnn {

using nlohmann::json;

namespace {

void append_f32(std::vector<unsigned char>& blob, float v) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) blob.push_back(static_cast<unsigned char>(bits >> (8 * i)));
}

float read_f32(const std::vector<unsigned char>& blob, std::size_t at) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= std::uint32_t{blob[at + static_cast<std::size_t>(i)]} << (8 * i);
  return std::bit_cast<float>(bits);
}

std::vector<unsigned char> weight_blob(const Model<float>& model) {
  std::vector<unsigned char> blob;
  for (const auto& [store_name, store] : model.stores())
    for (const auto& [name, p] : *store)
      for (Index i = 0; i < p.value.size(); ++i) append_f32(blob, p.value[i]);
  return blob;
}

std::string fnv1a(const std::vector<unsigned char>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

json unet_json(const UNetConfig& c) {
  return {{"depth", c.depth}, {"init_filters", c.init_filters}, {"in_channels", c.in_channels}, {"class_count", c.class_count}};
}

UNetConfig unet_from(const json& j) {
  return {j.at("depth"), j.at("init_filters"), j.at("in_channels"), j.at("class_count")};
}

json shapes_json(const ModelShapes& s) {
  return {{"deep", unet_json(s.deep)},
          {"wide", unet_json(s.wide)},
          {"ae",
           {{"stage_growths", s.ae.stage_growths},
            {"bottleneck_growth", s.ae.bottleneck_growth},
            {"in_channels", s.ae.in_channels},
            {"out_channels", s.ae.out_channels},
            {"segmentation_classes", s.ae.segmentation_classes}}},
          {"recon_weight", s.recon_weight},
          {"ae_in_vote", s.ae_in_vote},
          {"dice_weight", s.dice_weight}};
}

ModelShapes shapes_from(const json& j) {
  ModelShapes s;
  s.deep = unet_from(j.at("deep"));
  s.wide = unet_from(j.at("wide"));
  const json& a = j.at("ae");
  s.ae = DenseAEConfig{a.at("stage_growths").get<std::vector<int>>(), a.at("bottleneck_growth"), a.at("in_channels"),
                       a.at("out_channels"), a.at("segmentation_classes")};
  s.recon_weight = j.at("recon_weight");
  s.ae_in_vote = j.at("ae_in_vote");
  s.dice_weight = j.value("dice_weight", 0.0);
  return s;
}

std::filesystem::path manifest_path(const std::filesystem::path& dir, const std::string& name) { return dir / (name + ".json"); }
std::filesystem::path blob_path(const std::filesystem::path& dir, const std::string& name) { return dir / (name + ".bin"); }

}  // namespace

std::string weights_hash(const Model<float>& model) { return fnv1a(weight_blob(model)); }

bool checkpoint_exists(const std::filesystem::path& dir, const std::string& name) {
  return std::filesystem::exists(manifest_path(dir, name)) && std::filesystem::exists(blob_path(dir, name));
}

void save_checkpoint(const std::filesystem::path& dir, const std::string& name, CheckpointInfo info,
                     const Model<float>& model) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const std::vector<unsigned char> blob = weight_blob(model);
  info.model = model.kind();
  info.shapes = model.shapes();
  info.weights_hash = fnv1a(blob);

  json params = json::array();
  std::uint64_t offset = 0;
  for (const auto& [store_name, store] : model.stores())
    for (const auto& [pname, p] : *store) {
      params.push_back({{"name", store_name + "/" + pname}, {"shape", p.value.shape()}, {"offset", offset}});
      offset += 4 * static_cast<std::uint64_t>(p.value.size());
    }
  json manifest = {{"model", model_name(info.model)},
                   {"phase", info.phase},
                   {"experiment", info.experiment},
                   {"seed", info.seed},
                   {"epoch", info.epoch},
                   {"val_dice", info.val_dice},
                   {"slice_size", info.slice_size},
                   {"config", shapes_json(info.shapes)},
                   {"parameters", params},
                   {"members", info.members},
                   {"weights_hash", info.weights_hash}};

  std::ofstream bin(blob_path(dir, name), std::ios::binary | std::ios::trunc);
  if (!bin) throw IoError("cannot write " + blob_path(dir, name).string());
  bin.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  std::ofstream js(manifest_path(dir, name), std::ios::trunc);
  if (!js) throw IoError("cannot write " + manifest_path(dir, name).string());
  js << manifest.dump(2) << '\n';
  if (!bin || !js) throw IoError("failed writing checkpoint " + name);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir, const std::string& name) {
  std::ifstream js(manifest_path(dir, name));
  if (!js) throw IoError("missing checkpoint manifest " + manifest_path(dir, name).string());
  std::ifstream bin(blob_path(dir, name), std::ios::binary);
  if (!bin) throw IoError("missing checkpoint blob " + blob_path(dir, name).string());
  const std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  try {
    const json m = json::parse(js);
    CheckpointInfo info;
    info.model = parse_model(m.at("model"));
    info.phase = m.at("phase");
    info.experiment = m.at("experiment");
    info.seed = m.at("seed");
    info.epoch = m.at("epoch");
    info.val_dice = m.at("val_dice");
    info.slice_size = m.value("slice_size", kSliceSize);
    info.shapes = shapes_from(m.at("config"));
    info.members = m.at("members").get<std::map<std::string, std::string>>();
    info.weights_hash = m.at("weights_hash");

    LoadedCheckpoint out{info, Model<float>(info.model, info.shapes)};
    std::size_t expected = 0, listed = 0;
    for (auto& [store_name, store] : out.model.stores())
      for (auto& [pname, p] : *store) {
        const std::string full = store_name + "/" + pname;
        const json* entry = nullptr;
        for (const auto& e : m.at("parameters"))
          if (e.at("name") == full) entry = &e;
        if (!entry) throw FormatError("checkpoint lacks parameter " + full);
        if (entry->at("shape").get<Shape>() != p.value.shape())
          throw FormatError("checkpoint shape mismatch for " + full + ": manifest " +
                            shape_string(entry->at("shape").get<Shape>()) + " vs network " + shape_string(p.value.shape()));
        const std::size_t offset = entry->at("offset");
        if (offset + 4 * static_cast<std::size_t>(p.value.size()) > blob.size()) throw FormatError("checkpoint blob truncated");
        for (Index i = 0; i < p.value.size(); ++i) p.value[i] = read_f32(blob, offset + 4 * static_cast<std::size_t>(i));
        expected += 4 * static_cast<std::size_t>(p.value.size());
        ++listed;
      }
    if (listed != m.at("parameters").size()) throw FormatError("checkpoint lists parameters the model does not have");
    if (expected != blob.size()) throw FormatError("checkpoint blob length does not match the manifest");
    if (weights_hash(out.model) != info.weights_hash) throw FormatError("checkpoint weights hash mismatch");
    return out;
  } catch (const json::exception& e) {
    throw FormatError("bad checkpoint manifest " + name + ": " + e.what());
  }
}

}  // namespace pnn
