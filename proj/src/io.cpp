#include "disco/io.hpp"

#include <algorithm>
#include <cctype>
#include <cfenv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <json.hpp>

#include "disco/errors.hpp"

namespace disco {

namespace {

using json = nlohmann::json;

// Little-endian primitive packing.
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFFu));
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (int i = 0; i < 8; ++i) out.push_back(char((bits >> (8 * i)) & 0xFFu));
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, const char* what) : bytes_(bytes), what_(what) {}

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

  void expect_magic(const char* magic) {
    const std::size_t n = std::strlen(magic);
    if (bytes_.compare(0, n, magic) != 0) {
      throw ParseError(std::string(what_) + ": bad magic (expected \"" + magic + "\")", 0);
    }
    pos_ = n;
  }

  std::uint8_t u8() {
    need(1);
    return std::uint8_t(bytes_[pos_++]);
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t(std::uint8_t(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }

  std::string text(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw ParseError(std::string(what_) + ": truncated input, needed " + std::to_string(n) +
                           " more bytes",
                       pos_);
    }
  }

 private:
  const std::string& bytes_;
  const char* what_;
  std::size_t pos_ = 0;
};

json parse_json(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string(what) + ": invalid JSON", e.byte == 0 ? 0 : e.byte - 1);
  }
}

double number_at(const json& j, const char* what) {
  if (!j.is_number()) throw DomainError(std::string(what) + ": expected a number");
  return j.get<double>();
}

PointMatrix<double> points_from(const json& j, const char* what) {
  if (!j.is_array()) throw DomainError(std::string(what) + ": expected an array of [x, y]");
  PointMatrix<double> p(Index(j.size()), 2);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const json& row = j[i];
    if (!row.is_array() || row.size() != 2) {
      throw DomainError(std::string(what) + ": entry " + std::to_string(i) + " is not [x, y]");
    }
    p(Index(i), 0) = number_at(row[0], what);
    p(Index(i), 1) = number_at(row[1], what);
  }
  return p;
}

std::string points_text(const PointMatrix<double>& p) {
  std::string s = "[";
  for (Index i = 0; i < p.rows(); ++i) {
    if (i) s += ",";
    s += "[" + format_number(p(i, 0)) + "," + format_number(p(i, 1)) + "]";
  }
  return s + "]";
}

template <typename Derived>
std::string matrix_text(const Eigen::MatrixBase<Derived>& m) {
  std::string s = "[";
  for (Index r = 0; r < m.rows(); ++r) {
    if (r) s += ",";
    s += "[";
    for (Index c = 0; c < m.cols(); ++c) {
      if (c) s += ",";
      s += format_number(m(r, c));
    }
    s += "]";
  }
  return s + "]";
}

template <int Rows, int Cols>
Eigen::Matrix<double, Rows, Cols> fixed_matrix(const json& j, const char* what) {
  Eigen::Matrix<double, Rows, Cols> m;
  if (!j.is_array() || j.size() != std::size_t(Rows)) {
    throw DomainError(std::string(what) + ": expected " + std::to_string(Rows) + " rows");
  }
  for (int r = 0; r < Rows; ++r) {
    if (!j[r].is_array() || j[r].size() != std::size_t(Cols)) {
      throw DomainError(std::string(what) + ": expected " + std::to_string(Cols) + " columns");
    }
    for (int c = 0; c < Cols; ++c) m(r, c) = number_at(j[r][c], what);
  }
  return m;
}

const json& field(const json& j, const char* key, const char* what) {
  const auto it = j.find(key);
  if (it == j.end()) throw DomainError(std::string(what) + ": missing field '" + key + "'");
  return *it;
}

void reject_unknown_keys(const json& j, const std::set<std::string>& known, const char* what) {
  for (const auto& item : j.items()) {
    if (!known.count(item.key())) {
      throw DomainError(std::string(what) + ": unknown key '" + item.key() + "'");
    }
  }
}

Index index_value(const json& j, const char* key) {
  if (!j.is_number_integer()) throw DomainError(std::string("'") + key + "' must be an integer");
  return j.get<Index>();
}

std::vector<Index> index_list(const json& j, const char* key) {
  if (!j.is_array()) throw DomainError(std::string("'") + key + "' must be an array");
  std::vector<Index> v;
  for (const auto& e : j) v.push_back(index_value(e, key));
  return v;
}

// PNM header tokens are separated by whitespace and may carry '#' comments.
std::size_t skip_pnm_space(const std::string& b, std::size_t pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(b[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  return pos;
}

long pnm_int(const std::string& b, std::size_t& pos, const char* name) {
  pos = skip_pnm_space(b, pos);
  const std::size_t start = pos;
  long v = 0;
  while (pos < b.size() && std::isdigit(static_cast<unsigned char>(b[pos]))) {
    v = v * 10 + (b[pos] - '0');
    if (v > (1L << 24)) throw ParseError(std::string("pnm: ") + name + " too large", start);
    ++pos;
  }
  if (pos == start) throw ParseError(std::string("pnm: expected ") + name, start);
  return v;
}

}  // namespace

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("cannot open '" + path + "' for reading");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DomainError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw DomainError("failed writing '" + path + "'");
}

std::uint8_t quantize_unit(double v) {
  if (std::isnan(v)) throw DomainError("quantize: NaN pixel value");
  const double scaled = std::clamp(v, 0.0, 1.0) * 255.0;
  // nearbyint honours the rounding mode; force ties-to-even explicitly.
  const int saved = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const double r = std::nearbyint(scaled);
  std::fesetround(saved);
  return std::uint8_t(r);
}

TensorD decode_pnm(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw ParseError("pnm: bad magic (expected P5 or P6)", 0);
  }
  const Index channels = bytes[1] == '6' ? 3 : 1;
  std::size_t pos = 2;
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw ParseError("pnm: bad magic (expected whitespace after P5/P6)", pos);
  }
  const long width = pnm_int(bytes, pos, "width");
  const long height = pnm_int(bytes, pos, "height");
  const std::size_t maxval_at = skip_pnm_space(bytes, pos);
  const long maxval = pnm_int(bytes, pos, "maxval");
  if (width < 1 || height < 1) throw ParseError("pnm: zero image extent", maxval_at);
  if (maxval != 255) throw ParseError("pnm: only maxval 255 is supported", maxval_at);
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw ParseError("pnm: expected a single whitespace before the raster", pos);
  }
  ++pos;
  const std::size_t need = std::size_t(width) * std::size_t(height) * std::size_t(channels);
  if (bytes.size() - pos < need) {
    throw ParseError("pnm: raster truncated, expected " + std::to_string(need) + " bytes", pos);
  }
  if (bytes.size() - pos > need) {
    throw ParseError("pnm: trailing bytes after raster", pos + need);
  }
  TensorD img({channels, height, width});
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      for (Index c = 0; c < channels; ++c) {
        const auto v = static_cast<unsigned char>(bytes[pos++]);
        img(c, y, x) = double(v) / 255.0;
      }
    }
  }
  return img;
}

std::string encode_pnm(const TensorD& image) {
  TensorD img = image.rank() == 2 ? image.reshaped({1, image.dim(0), image.dim(1)}) : image;
  require_rank(img, 3, "encode_pnm");
  const Index channels = img.dim(0);
  if (channels != 1 && channels != 3) {
    throw DomainError("encode_pnm: expected 1 or 3 channels, got " + shape_string(img.shape()));
  }
  const Index h = img.dim(1), w = img.dim(2);
  std::string out = (channels == 3 ? "P6\n" : "P5\n") + std::to_string(w) + " " +
                    std::to_string(h) + "\n255\n";
  out.reserve(out.size() + std::size_t(channels * h * w));
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      for (Index c = 0; c < channels; ++c) out.push_back(char(quantize_unit(img(c, y, x))));
    }
  }
  return out;
}

TensorD read_pnm(const std::string& path) { return decode_pnm(read_file(path)); }

void write_pnm(const std::string& path, const TensorD& image) {
  write_file(path, encode_pnm(image));
}

std::string encode_flow(const FlowFieldD& flow) {
  std::string out = "DFLW";
  put_u32(out, std::uint32_t(flow.height()));
  put_u32(out, std::uint32_t(flow.width()));
  for (Index r = 0; r < flow.height(); ++r) {
    for (Index c = 0; c < flow.width(); ++c) {
      put_f64(out, flow.x(r, c));
      put_f64(out, flow.y(r, c));
    }
  }
  return out;
}

FlowFieldD decode_flow(const std::string& bytes) {
  ByteReader in(bytes, "flow");
  in.expect_magic("DFLW");
  const std::uint32_t h = in.u32(), w = in.u32();
  if (h == 0 || w == 0) throw ParseError("flow: zero extent", 4);
  in.need(std::size_t(h) * w * 16);
  TensorD coords({2, Index(h), Index(w)});
  for (Index r = 0; r < Index(h); ++r) {
    for (Index c = 0; c < Index(w); ++c) {
      const std::size_t at = in.offset();
      coords(0, r, c) = in.f64();
      coords(1, r, c) = in.f64();
      if (!std::isfinite(coords(0, r, c)) || !std::isfinite(coords(1, r, c))) {
        throw ParseError("flow: non-finite coordinate", at);
      }
    }
  }
  if (!in.at_end()) throw ParseError("flow: trailing bytes", in.offset());
  return FlowFieldD(std::move(coords));
}

std::string encode_checkpoint(const ParameterSet& params) {
  std::string out = "DCHK";
  put_u32(out, std::uint32_t(params.size()));
  for (const auto& [name, t] : params.entries()) {
    if (name.empty() || name.size() > 255) {
      throw DomainError("checkpoint: tensor name '" + name + "' must be 1..255 bytes");
    }
    out.push_back(char(name.size()));
    out += name;
    put_u32(out, std::uint32_t(t.rank()));
    for (Index d : t.shape()) put_u32(out, std::uint32_t(d));
    for (Index i = 0; i < t.size(); ++i) put_f64(out, t[i]);
  }
  return out;
}

ParameterSet decode_checkpoint(const std::string& bytes) {
  ByteReader in(bytes, "checkpoint");
  in.expect_magic("DCHK");
  const std::uint32_t count = in.u32();
  ParameterSet p;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::size_t entry_at = in.offset();
    const std::uint8_t len = in.u8();
    if (len == 0) throw ParseError("checkpoint: empty tensor name", entry_at);
    std::string name = in.text(len);
    if (p.contains(name)) throw ParseError("checkpoint: duplicate tensor '" + name + "'", entry_at);
    const std::uint32_t rank = in.u32();
    if (rank > 8) throw ParseError("checkpoint: rank " + std::to_string(rank) + " too large", entry_at);
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(Index(in.u32()));
      numel *= std::size_t(shape.back());
    }
    in.need(numel * 8);
    TensorD t(shape);
    for (Index i = 0; i < t.size(); ++i) t[i] = in.f64();
    p.add(std::move(name), std::move(t));
  }
  if (!in.at_end()) throw ParseError("checkpoint: trailing bytes", in.offset());
  return p;
}

std::string format_number(double v) {
  if (!std::isfinite(v)) throw DomainError("json: cannot serialize a non-finite number");
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string transform_to_json(const Transform& t) {
  if (const auto* a = std::get_if<Affine2D<double>>(&t)) {
    return "{\"type\":\"affine\",\"linear\":" + matrix_text(a->linear) + ",\"translation\":[" +
           format_number(a->translation.x()) + "," + format_number(a->translation.y()) + "]}\n";
  }
  const auto& tps = std::get<TpsTransform<double>>(t);
  return "{\"type\":\"tps\",\"anchors\":" + points_text(tps.anchors.points()) +
         ",\"affine\":" + matrix_text(tps.affine) + ",\"weights\":" + points_text(tps.weights) +
         "}\n";
}

Transform transform_from_json(const std::string& text) {
  const json j = parse_json(text, "transform");
  if (!j.is_object()) throw DomainError("transform: expected a JSON object");
  const json& type = field(j, "type", "transform");
  if (!type.is_string()) throw DomainError("transform: 'type' must be a string");
  const TransformKind kind = transform_kind_from_string(type.get<std::string>());
  if (kind == TransformKind::affine) {
    reject_unknown_keys(j, {"type", "linear", "translation"}, "transform");
    Affine2D<double> a;
    a.linear = fixed_matrix<2, 2>(field(j, "linear", "transform"), "transform linear");
    const json& tr = field(j, "translation", "transform");
    if (!tr.is_array() || tr.size() != 2) throw DomainError("transform: translation must be [x, y]");
    a.translation = Vec2<double>(number_at(tr[0], "translation"), number_at(tr[1], "translation"));
    return a;
  }
  reject_unknown_keys(j, {"type", "anchors", "affine", "weights"}, "transform");
  KeypointSet<double> anchors(points_from(field(j, "anchors", "transform"), "tps anchors"));
  const Mat23<double> affine = fixed_matrix<2, 3>(field(j, "affine", "transform"), "tps affine");
  PointMatrix<double> weights = points_from(field(j, "weights", "transform"), "tps weights");
  if (weights.rows() != anchors.size()) {
    throw DomainError("transform: " + std::to_string(weights.rows()) + " weights for " +
                      std::to_string(anchors.size()) + " anchors");
  }
  return TpsTransform<double>{std::move(anchors), affine, std::move(weights)};
}

std::string keypoints_to_json(const PointMatrix<double>& points) {
  return "{\"points\":" + points_text(points) + "}\n";
}

PointMatrix<double> keypoints_from_json(const std::string& text) {
  const json j = parse_json(text, "keypoints");
  if (j.is_array()) return points_from(j, "keypoints");
  if (!j.is_object()) throw DomainError("keypoints: expected an object with 'points'");
  reject_unknown_keys(j, {"points"}, "keypoints");
  return points_from(field(j, "points", "keypoints"), "keypoints");
}

std::string config_to_json(const PipelineConfig& c) {
  auto list = [](const std::vector<Index>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s + "]";
  };
  std::ostringstream o;
  o << "{\"variant\":\"" << to_string(c.variant) << "\",\"transform\":\"" << to_string(c.transform)
    << "\",\"image_size\":" << c.image_size << ",\"encoder_widths\":" << list(c.encoder_widths)
    << ",\"feature_channels\":" << c.feature_channels
    << ",\"residual_blocks\":" << c.residual_blocks
    << ",\"decoder_widths\":" << list(c.decoder_widths) << ",\"output_kernel\":" << c.output_kernel
    << ",\"expression_dim\":" << c.expression_dim
    << ",\"demod_eps\":" << format_number(c.demod_eps)
    << ",\"cov_eps\":" << format_number(c.cov_eps) << ",\"tps_reg\":" << format_number(c.tps_reg)
    << ",\"perceptual_weight\":" << format_number(c.perceptual_weight)
    << ",\"learning_rate\":" << format_number(c.learning_rate)
    << ",\"beta1\":" << format_number(c.beta1) << ",\"beta2\":" << format_number(c.beta2)
    << ",\"adam_eps\":" << format_number(c.adam_eps) << ",\"batch_size\":" << c.batch_size
    << ",\"steps\":" << c.steps << ",\"seed\":" << c.seed << "}\n";
  return o.str();
}

namespace {

void apply_config_key(PipelineConfig& c, const std::string& k, const json& v) {
  if (k == "variant") {
    c.variant = variant_from_string(v.get<std::string>());
  } else if (k == "transform") {
    c.transform = transform_kind_from_string(v.get<std::string>());
  } else if (k == "image_size") {
    c.image_size = index_value(v, "image_size");
  } else if (k == "encoder_widths") {
    c.encoder_widths = index_list(v, "encoder_widths");
  } else if (k == "feature_channels") {
    c.feature_channels = index_value(v, "feature_channels");
  } else if (k == "residual_blocks") {
    c.residual_blocks = index_value(v, "residual_blocks");
  } else if (k == "decoder_widths") {
    c.decoder_widths = index_list(v, "decoder_widths");
  } else if (k == "output_kernel") {
    c.output_kernel = index_value(v, "output_kernel");
  } else if (k == "expression_dim") {
    c.expression_dim = index_value(v, "expression_dim");
  } else if (k == "demod_eps") {
    c.demod_eps = number_at(v, "demod_eps");
  } else if (k == "cov_eps") {
    c.cov_eps = number_at(v, "cov_eps");
  } else if (k == "tps_reg") {
    c.tps_reg = number_at(v, "tps_reg");
  } else if (k == "perceptual_weight") {
    c.perceptual_weight = number_at(v, "perceptual_weight");
  } else if (k == "learning_rate") {
    c.learning_rate = number_at(v, "learning_rate");
  } else if (k == "beta1") {
    c.beta1 = number_at(v, "beta1");
  } else if (k == "beta2") {
    c.beta2 = number_at(v, "beta2");
  } else if (k == "adam_eps") {
    c.adam_eps = number_at(v, "adam_eps");
  } else if (k == "batch_size") {
    c.batch_size = index_value(v, "batch_size");
  } else if (k == "steps") {
    c.steps = index_value(v, "steps");
  } else if (k == "seed") {
    if (!v.is_number_unsigned()) throw DomainError("config: 'seed' must be a nonnegative integer");
    c.seed = v.get<std::uint64_t>();
  } else {
    throw DomainError("config: unknown key '" + k + "'");
  }
}

}  // namespace

PipelineConfig config_from_json(const std::string& text) {
  const json j = parse_json(text, "config");
  if (!j.is_object()) throw DomainError("config: expected a JSON object");
  PipelineConfig c;
  try {
    for (const auto& item : j.items()) apply_config_key(c, item.key(), item.value());
  } catch (const json::type_error& e) {
    throw DomainError(std::string("config: wrong value type (") + e.what() + ")");
  }
  c.validate();
  return c;
}

SceneSpec scene_spec_from_json(const std::string& text) {
  const json j = parse_json(text, "scene spec");
  if (!j.is_object()) throw DomainError("scene spec: expected a JSON object");
  reject_unknown_keys(j,
                      {"size", "transform", "max_rotation_deg", "min_scale", "max_scale",
                       "max_translation", "keypoint_jitter", "expression_dim", "zero_motion",
                       "fixed_translation"},
                      "scene spec");
  SceneSpec s;
  auto number = [&](const char* key, double& out) {
    if (j.contains(key)) out = number_at(j[key], key);
  };
  try {
    if (j.contains("size")) s.size = index_value(j["size"], "size");
    if (j.contains("expression_dim")) s.expression_dim = index_value(j["expression_dim"], "expression_dim");
    if (j.contains("transform")) {
      s.transform = transform_kind_from_string(j["transform"].get<std::string>());
    }
    number("max_rotation_deg", s.max_rotation_deg);
    number("min_scale", s.min_scale);
    number("max_scale", s.max_scale);
    number("max_translation", s.max_translation);
    number("keypoint_jitter", s.keypoint_jitter);
    if (j.contains("zero_motion")) {
      if (!j["zero_motion"].is_boolean()) throw DomainError("scene spec: zero_motion must be a boolean");
      s.zero_motion = j["zero_motion"].get<bool>();
    }
    if (j.contains("fixed_translation")) {
      const json& t = j["fixed_translation"];
      if (!t.is_array() || t.size() != 2) {
        throw DomainError("scene spec: fixed_translation must be [x, y]");
      }
      s.fixed_translation = Vec2<double>(number_at(t[0], "fixed_translation"),
                                         number_at(t[1], "fixed_translation"));
    }
  } catch (const json::type_error& e) {
    throw DomainError(std::string("scene spec: wrong value type (") + e.what() + ")");
  }
  s.validate();
  return s;
}

std::string loss_csv(const std::vector<double>& history) {
  std::string out = "step,loss\n";
  for (std::size_t i = 0; i < history.size(); ++i) {
    out += std::to_string(i + 1) + "," + format_number(history[i]) + "\n";
  }
  return out;
}

}  // namespace disco
