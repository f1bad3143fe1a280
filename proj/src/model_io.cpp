#include <bit>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "otbr/io.hpp"

namespace otbr {

using json = nlohmann::json;

FormatError::FormatError(const std::string& what, std::size_t offset)
    : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

void ByteWriter::bytes(const void* p, std::size_t n) {
  auto* b = static_cast<const std::uint8_t*>(p);
  buf_.insert(buf_.end(), b, b + n);
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::floats(const std::vector<float>& v) {
  buf_.reserve(buf_.size() + 4 * v.size());
  for (float f : v) f32(f);
}

void ByteReader::need(std::size_t n, const char* what) {
  if (remaining() < n)
    throw FormatError(std::string("truncated input while reading ") + what + ": need " + std::to_string(n) +
                          " bytes, " + std::to_string(remaining()) + " left",
                      pos_);
}

void ByteReader::expect_magic(std::string_view magic) {
  need(magic.size(), "magic");
  for (std::size_t i = 0; i < magic.size(); ++i)
    if (buf_[pos_ + i] != static_cast<std::uint8_t>(magic[i]))
      throw FormatError("bad magic, expected \"" + std::string(magic) + "\"", pos_ + i);
  pos_ += magic.size();
}

std::uint32_t ByteReader::u32(const char* what) {
  need(4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

float ByteReader::f32(const char* what) { return std::bit_cast<float>(u32(what)); }

std::uint8_t ByteReader::u8(const char* what) {
  need(1, what);
  return buf_[pos_++];
}

std::string ByteReader::string(std::size_t n, const char* what) {
  need(n, what);
  std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
  pos_ += n;
  return s;
}

void ByteReader::floats(std::vector<float>& out, std::size_t n, const char* what) {
  if (n > remaining() / 4) need(n * 4, what);
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f32(what);
}

void ByteReader::expect_end() {
  if (remaining() != 0) throw FormatError(std::to_string(remaining()) + " unexpected trailing bytes", pos_);
}

// ---------------------------------------------------------------- model container

namespace {

json shape_json(const Shape& s) { return json(s); }

Shape json_shape(const json& j) {
  Shape s;
  for (const auto& v : j) s.push_back(v.get<std::size_t>());
  return s;
}

}  // namespace

std::vector<std::uint8_t> encode_model(const Model& model) {
  json layers = json::array();
  std::vector<const Tensor*> blobs;
  for (const Layer& l : model.layers()) {
    json e{{"kind", layer_kind(l)}};
    if (auto* d = std::get_if<DenseLayer>(&l)) {
      e["weights"] = shape_json(d->weights.shape());
      e["bias"] = shape_json(d->bias.shape());
      blobs.push_back(&d->weights);
      blobs.push_back(&d->bias);
    } else if (auto* c = std::get_if<Conv2DLayer>(&l)) {
      e["weights"] = shape_json(c->weights.shape());
      e["bias"] = shape_json(c->bias.shape());
      e["stride"] = c->stride;
      e["padding"] = c->padding;
      blobs.push_back(&c->weights);
      blobs.push_back(&c->bias);
    }
    layers.push_back(std::move(e));
  }
  json manifest{{"inputShape", shape_json(model.input_shape())},
                {"classCount", model.class_count()},
                {"layers", std::move(layers)},
                {"metadata",
                 {{"name", model.metadata().name},
                  {"seed", model.metadata().seed},
                  {"tags", model.metadata().tags}}}};
  std::string text = manifest.dump();
  ByteWriter w;
  w.bytes("OTBR", 4);
  w.u32(kModelFormatVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text.data(), text.size());
  for (const Tensor* t : blobs) w.floats(t->values());
  return std::move(w.buffer());
}

Model decode_model(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  r.expect_magic("OTBR");
  const std::size_t versionAt = r.offset();
  std::uint32_t version = r.u32("version");
  if (version != kModelFormatVersion)
    throw FormatError("unsupported model container version " + std::to_string(version), versionAt);
  std::uint32_t len = r.u32("manifest length");
  const std::size_t manifestAt = r.offset();
  std::string text = r.string(len, "manifest");
  json m;
  try {
    m = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what(), manifestAt);
  }
  try {
    std::vector<Layer> layers;
    for (const auto& e : m.at("layers")) {
      std::string kind = e.at("kind").get<std::string>();
      auto load = [&](const char* key) {
        Shape s = json_shape(e.at(key));
        std::vector<float> v;
        r.floats(v, shape_size(s), "parameter blob");
        return Tensor(s, std::move(v));
      };
      if (kind == "dense") {
        Tensor w = load("weights");
        Tensor b = load("bias");
        layers.emplace_back(DenseLayer{std::move(w), std::move(b)});
      } else if (kind == "conv2d") {
        Tensor w = load("weights");
        Tensor b = load("bias");
        layers.emplace_back(Conv2DLayer{std::move(w), std::move(b), e.at("stride").get<std::size_t>(),
                                        e.at("padding").get<std::size_t>()});
      } else if (kind == "relu") {
        layers.emplace_back(ReLULayer{});
      } else if (kind == "flatten") {
        layers.emplace_back(FlattenLayer{});
      } else {
        throw FormatError("unknown layer kind \"" + kind + "\"", manifestAt);
      }
    }
    r.expect_end();
    ModelMetadata meta;
    const auto& mj = m.at("metadata");
    meta.name = mj.at("name").get<std::string>();
    meta.seed = mj.at("seed").get<std::uint64_t>();
    meta.tags = mj.at("tags").get<std::map<std::string, std::string>>();
    return Model(json_shape(m.at("inputShape")), std::move(layers), m.at("classCount").get<std::size_t>(),
                 std::move(meta));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what(), manifestAt);
  } catch (const DimensionError& e) {
    throw FormatError(std::string("inconsistent layer shapes: ") + e.what(), manifestAt);
  }
}

void save_model(const Model& model, const std::filesystem::path& path) { write_file_atomic(path, encode_model(model)); }

Model load_model(const std::filesystem::path& path) { return decode_model(read_file(path)); }

}  // namespace otbr
