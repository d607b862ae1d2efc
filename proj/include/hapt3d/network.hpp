#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "hapt3d/autograd.hpp"
#include "hapt3d/cloud.hpp"
#include "hapt3d/error.hpp"
#include "hapt3d/random.hpp"
#include "hapt3d/sparse.hpp"

namespace hapt3d {

// Which earlier feature maps each decoder stage fuses (ablation rows A-D).
enum class SkipScheme { kNone, kDecoder, kEncoder, kEncoderDecoder };

inline std::string to_string(SkipScheme s) {
  switch (s) {
    case SkipScheme::kNone: return "None";
    case SkipScheme::kDecoder: return "Decoder";
    case SkipScheme::kEncoder: return "Encoder";
    case SkipScheme::kEncoderDecoder: return "EncoderDecoder";
  }
  return "?";
}

inline char scheme_letter(SkipScheme s) { return static_cast<char>('A' + static_cast<int>(s)); }

// Accepts the row letter (A-D) or the scheme name.
inline SkipScheme parse_scheme(const std::string& s) {
  if (s == "A" || s == "None") return SkipScheme::kNone;
  if (s == "B" || s == "Decoder") return SkipScheme::kDecoder;
  if (s == "C" || s == "Encoder") return SkipScheme::kEncoder;
  if (s == "D" || s == "EncoderDecoder" || s == "Encoder+Decoder") return SkipScheme::kEncoderDecoder;
  throw ArgumentError("unknown skip scheme '" + s + "' (expected A-D or a scheme name)");
}

inline constexpr std::array<SkipScheme, 4> kAllSchemes = {
    SkipScheme::kNone, SkipScheme::kDecoder, SkipScheme::kEncoder, SkipScheme::kEncoderDecoder};

enum class Branch { kSemantic = 0, kTree = 1, kInstance = 2 };
inline constexpr std::array<const char*, 3> kBranchNames = {"sem", "tree", "ins"};

struct NetworkConfig {
  int num_classes = ClassTable::kNumClasses;
  int stages = 4;
  std::vector<int> encoder_channels{8, 16, 32, 64};
  std::vector<int> decoder_channels{32, 16, 8, 8};
  SkipScheme skip_scheme = SkipScheme::kEncoderDecoder;
  double norm_eps = 1e-5;
  double norm_momentum = 0.9;
  double voxel_size = 0.003;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 2) throw ArgumentError("network config: num_classes must be >= 2");
    if (stages < 1) throw ArgumentError("network config: stages must be >= 1");
    if (static_cast<int>(encoder_channels.size()) != stages ||
        static_cast<int>(decoder_channels.size()) != stages) {
      throw ArgumentError("network config: channel lists must have one entry per stage");
    }
    for (int c : encoder_channels)
      if (c < 1) throw ArgumentError("network config: channels must be positive");
    for (int c : decoder_channels)
      if (c < 1) throw ArgumentError("network config: channels must be positive");
    if (!(norm_eps > 0.0) || !(voxel_size > 0.0)) {
      throw ArgumentError("network config: norm_eps and voxel_size must be positive");
    }
    if (norm_momentum < 0.0 || norm_momentum > 1.0) {
      throw ArgumentError("network config: norm_momentum must lie in [0, 1]");
    }
  }

  std::string serialize() const;
  static NetworkConfig deserialize(const std::string& text);

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

namespace net_detail {

inline std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw FormatError("bad integer list '" + s + "'");
    }
  }
  return out;
}

inline std::string exact(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

}  // namespace net_detail

inline std::string NetworkConfig::serialize() const {
  std::string s;
  s += "num_classes=" + std::to_string(num_classes) + "\n";
  s += "stages=" + std::to_string(stages) + "\n";
  s += "encoder_channels=" + net_detail::join(encoder_channels) + "\n";
  s += "decoder_channels=" + net_detail::join(decoder_channels) + "\n";
  s += "skip_scheme=" + to_string(skip_scheme) + "\n";
  s += "norm_eps=" + net_detail::exact(norm_eps) + "\n";
  s += "norm_momentum=" + net_detail::exact(norm_momentum) + "\n";
  s += "voxel_size=" + net_detail::exact(voxel_size) + "\n";
  s += "seed=" + std::to_string(seed) + "\n";
  return s;
}

inline NetworkConfig NetworkConfig::deserialize(const std::string& text) {
  NetworkConfig c;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("network config: bad line '" + line + "'");
    const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
    try {
      if (k == "num_classes") c.num_classes = std::stoi(v);
      else if (k == "stages") c.stages = std::stoi(v);
      else if (k == "encoder_channels") c.encoder_channels = net_detail::split_ints(v);
      else if (k == "decoder_channels") c.decoder_channels = net_detail::split_ints(v);
      else if (k == "skip_scheme") c.skip_scheme = parse_scheme(v);
      else if (k == "norm_eps") c.norm_eps = std::stod(v);
      else if (k == "norm_momentum") c.norm_momentum = std::stod(v);
      else if (k == "voxel_size") c.voxel_size = std::stod(v);
      else if (k == "seed") c.seed = std::stoull(v);
      else throw FormatError("network config: unknown key '" + k + "'");
    } catch (const std::invalid_argument&) {
      throw FormatError("network config: bad value for '" + k + "'");
    }
  }
  c.validate();
  return c;
}

enum class Mode { kTrain, kEval };

// Per-voxel predictions at the base resolution. The Vars refer to the owning
// network's graph and are valid until the next forward or backward.
struct NetworkOutput {
  CoordsPtr coords;
  std::vector<std::int32_t> point_to_row;  // input point -> voxel row
  Matrix positions;                        // voxel centers, meters (N x 3)
  Matrix semantic_logits;                  // N x K
  Matrix tree_offsets;                     // N x 3, meters
  Matrix instance_offsets;                 // N x 3, meters
  Var logits_var;
  Var tree_var;
  Var instance_var;

  std::size_t rows() const { return semantic_logits.rows(); }
};

// Coordinate pyramid and the kernel maps shared by the encoder and all three
// decoders for one input.
struct Pyramid {
  std::vector<CoordsPtr> levels;
  std::vector<std::shared_ptr<const KernelMap>> same;
  std::vector<std::shared_ptr<const KernelMap>> down;
  std::vector<std::shared_ptr<const KernelMap>> up;
  std::shared_ptr<const KernelMap> pointwise;

  static Pyramid build(CoordsPtr base, int stages) {
    Pyramid p;
    p.levels.push_back(std::move(base));
    for (int l = 0; l < stages; ++l) p.levels.push_back(downsample_coords(*p.levels.back()));
    for (int l = 0; l <= stages; ++l) {
      p.same.push_back(std::make_shared<KernelMap>(build_kernel_map(*p.levels[l], *p.levels[l], 3, 1, false)));
    }
    for (int l = 0; l < stages; ++l) {
      p.down.push_back(std::make_shared<KernelMap>(build_kernel_map(*p.levels[l], *p.levels[l + 1], 3, 2, false)));
      p.up.push_back(std::make_shared<KernelMap>(build_kernel_map(*p.levels[l + 1], *p.levels[l], 3, 2, true)));
    }
    p.pointwise = std::make_shared<KernelMap>(build_kernel_map(*p.levels[0], *p.levels[0], 1, 1, false));
    return p;
  }
};

class Network {
 public:
  struct ConvLayer {
    Parameter* weight = nullptr;
    Parameter* bias = nullptr;
  };
  struct ConvBlock {
    ConvLayer conv;
    ops::NormParams norm;
  };
  struct ResidualBlock {
    ConvBlock first;
    ConvBlock second;
  };
  struct DecoderStage {
    ConvBlock up;
    ConvBlock fuse;
    ResidualBlock res;
    int fuse_in = 0;
  };
  struct Decoder {
    std::vector<DecoderStage> stages;
    ConvLayer head;
  };

  explicit Network(NetworkConfig config) : config_(std::move(config)) {
    config_.validate();
    Rng rng(config_.seed);
    const int S = config_.stages;
    const auto& E = config_.encoder_channels;
    const auto& D = config_.decoder_channels;
    stem_ = make_block("enc.stem", 3, kInputChannels, E[0], rng);
    for (int k = 0; k < S; ++k) {
      const int in = k == 0 ? E[0] : E[k - 1];
      down_.push_back(make_block("enc.down" + std::to_string(k), 3, in, E[k], rng));
      enc_res_.push_back(make_residual("enc.res" + std::to_string(k), E[k], rng));
    }
    const int head_out[3] = {config_.num_classes, 3, 3};
    for (int b = 0; b < 3; ++b) {
      Decoder dec;
      const std::string prefix = std::string("dec.") + kBranchNames[b];
      for (int j = 0; j < S; ++j) {
        DecoderStage st;
        const std::string sp = prefix + ".stage" + std::to_string(j);
        const int in = j == 0 ? E[S - 1] : D[j - 1];
        st.up = make_block(sp + ".up", 3, in, D[j], rng);
        st.fuse_in = D[j];
        const int level = S - 1 - j;
        if (uses_encoder_skip(static_cast<Branch>(b))) st.fuse_in += encoder_channels_at(level);
        if (uses_decoder_skip(static_cast<Branch>(b))) st.fuse_in += D[j];
        st.fuse = make_block(sp + ".fuse", 3, st.fuse_in, D[j], rng);
        st.res = make_residual(sp + ".res", D[j], rng);
        dec.stages.push_back(st);
      }
      dec.head = make_conv(prefix + ".head", 1, D[S - 1], head_out[b], rng);
      decoders_.push_back(std::move(dec));
    }
  }

  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  static constexpr int kInputChannels = 3;

  const NetworkConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  Graph& graph() { return graph_; }
  const Graph& graph() const { return graph_; }

  int encoder_channels_at(int level) const {
    return level == 0 ? config_.encoder_channels[0] : config_.encoder_channels[level - 1];
  }
  bool uses_encoder_skip(Branch) const {
    return config_.skip_scheme == SkipScheme::kEncoder ||
           config_.skip_scheme == SkipScheme::kEncoderDecoder;
  }
  bool uses_decoder_skip(Branch b) const {
    return b != Branch::kSemantic && (config_.skip_scheme == SkipScheme::kDecoder ||
                                      config_.skip_scheme == SkipScheme::kEncoderDecoder);
  }
  // Channels entering the fusing convolution of decoder `b`, stage `j`.
  int fuse_input_channels(Branch b, int stage) const {
    return decoders_.at(static_cast<int>(b)).stages.at(stage).fuse_in;
  }

  NetworkOutput forward(const LabeledCloud& cloud, Mode mode) {
    if (cloud.empty()) throw ArgumentError("forward: empty cloud");
    VoxelSeed seed = unique_coords(cloud, config_.voxel_size);
    NetworkOutput out = forward(seed.tensor, mode);
    out.point_to_row = std::move(seed.point_to_row);
    return out;
  }

  // Input features are per-voxel RGB colors in [0, 1].
  NetworkOutput forward(const SparseTensor& input, Mode mode) {
    if (input.size() == 0) throw ArgumentError("forward: empty input");
    if (input.channels() != kInputChannels) throw ArgumentError("forward: expected 3 input channels");
    if (input.stride() != 1) throw ArgumentError("forward: input must be at stride 1");
    const bool train = mode == Mode::kTrain;
    const int S = config_.stages;
    graph_.reset();
    const Pyramid pyr = Pyramid::build(input.coords, S);

    Matrix centered = input.feats;
    for (auto& v : centered.values()) v -= 0.5;
    Var x = ops::input(graph_, std::move(centered), pyr.levels[0]);

    std::vector<Var> enc(S + 1);
    enc[0] = block(stem_, x, pyr.same[0], pyr.levels[0], train);
    for (int k = 0; k < S; ++k) {
      Var h = block(down_[k], enc[k], pyr.down[k], pyr.levels[k + 1], train);
      enc[k + 1] = residual(enc_res_[k], h, pyr.same[k + 1], train);
    }

    std::array<Var, 3> heads;
    std::vector<Var> previous;  // stage outputs of the preceding decoder
    for (int b = 0; b < 3; ++b) {
      const Decoder& dec = decoders_[b];
      std::vector<Var> taps;
      Var h = enc[S];
      for (int j = 0; j < S; ++j) {
        const int level = S - 1 - j;
        const DecoderStage& st = dec.stages[j];
        Var up = block(st.up, h, pyr.up[level], pyr.levels[level], train);
        std::vector<Var> parts{up};
        if (uses_encoder_skip(static_cast<Branch>(b))) parts.push_back(enc[level]);
        if (uses_decoder_skip(static_cast<Branch>(b))) parts.push_back(previous.at(j));
        Var fused = parts.size() > 1 ? ops::concat(graph_, parts) : up;
        h = block(st.fuse, fused, pyr.same[level], pyr.levels[level], train);
        h = residual(st.res, h, pyr.same[level], train);
        taps.push_back(h);
      }
      heads[b] = ops::conv(graph_, h, *dec.head.weight, dec.head.bias, pyr.pointwise, pyr.levels[0]);
      previous = std::move(taps);
    }

    NetworkOutput out;
    out.coords = pyr.levels[0];
    out.positions = Matrix(input.size(), 3);
    for (std::size_t r = 0; r < input.size(); ++r) {
      const Vec3 c = voxel_center((*out.coords)[r], config_.voxel_size);
      for (int a = 0; a < 3; ++a) out.positions(r, a) = c[a];
    }
    out.point_to_row.resize(input.size());
    for (std::size_t r = 0; r < input.size(); ++r) out.point_to_row[r] = static_cast<std::int32_t>(r);
    out.logits_var = heads[0];
    out.tree_var = heads[1];
    out.instance_var = heads[2];
    out.semantic_logits = graph_.value(heads[0].id);
    out.tree_offsets = graph_.value(heads[1].id);
    out.instance_offsets = graph_.value(heads[2].id);
    return out;
  }

  // Populates every trainable parameter's gradient, then frees the graph.
  void backward(const Var& loss) {
    if (graph_.state() == Graph::State::kRecording) params_.zero_grad();
    graph_.backward(loss.id);
  }

  std::vector<Matrix> snapshot() const {
    std::vector<Matrix> s;
    for (std::size_t i = 0; i < params_.size(); ++i) s.push_back(params_[i].value);
    return s;
  }
  void restore(const std::vector<Matrix>& s) {
    if (s.size() != params_.size()) throw ArgumentError("restore: parameter count mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      params_[i].value.require_same_shape(s[i], "restore");
      params_[i].value = s[i];
    }
  }

 private:
  ConvLayer make_conv(const std::string& name, int kernel, int in, int out, Rng& rng) {
    const int vol = kernel * kernel * kernel;
    Matrix w(static_cast<std::size_t>(vol) * in, out);
    // Kaiming-uniform on fan-in.
    const double bound = std::sqrt(6.0 / static_cast<double>(vol * in));
    for (auto& v : w.values()) v = rng.uniform(-bound, bound);
    ConvLayer l;
    l.weight = &params_.add(name + ".weight", std::move(w));
    l.bias = &params_.add(name + ".bias", Matrix(1, out));
    return l;
  }

  ConvBlock make_block(const std::string& name, int kernel, int in, int out, Rng& rng) {
    ConvBlock b;
    b.conv = make_conv(name + ".conv", kernel, in, out, rng);
    b.norm.gamma = &params_.add(name + ".norm.gamma", Matrix(1, out, 1.0));
    b.norm.beta = &params_.add(name + ".norm.beta", Matrix(1, out));
    b.norm.running_mean = &params_.add(name + ".norm.running_mean", Matrix(1, out), false);
    b.norm.running_var = &params_.add(name + ".norm.running_var", Matrix(1, out, 1.0), false);
    b.norm.momentum = config_.norm_momentum;
    b.norm.eps = config_.norm_eps;
    return b;
  }

  ResidualBlock make_residual(const std::string& name, int ch, Rng& rng) {
    return {make_block(name + ".a", 3, ch, ch, rng), make_block(name + ".b", 3, ch, ch, rng)};
  }

  Var block(const ConvBlock& b, const Var& x, const std::shared_ptr<const KernelMap>& km,
            const CoordsPtr& out_coords, bool train) {
    Var h = ops::conv(graph_, x, *b.conv.weight, b.conv.bias, km, out_coords);
    h = ops::norm(graph_, h, b.norm, train);
    return ops::relu(graph_, h);
  }

  Var residual(const ResidualBlock& r, const Var& x, const std::shared_ptr<const KernelMap>& km,
               bool train) {
    Var h = block(r.first, x, km, x.coords, train);
    h = block(r.second, h, km, x.coords, train);
    return ops::add(graph_, x, h);
  }

  NetworkConfig config_;
  ParameterStore params_;
  Graph graph_;
  ConvBlock stem_;
  std::vector<ConvBlock> down_;
  std::vector<ResidualBlock> enc_res_;
  std::vector<Decoder> decoders_;
};

// Standalone layer primitives on an external graph, used for unit-level
// gradient checks and by callers composing their own models.
namespace layers {

inline Var conv_block(Graph& g, const Var& x, Parameter& w, Parameter& b, const ops::NormParams& np,
                      std::shared_ptr<const KernelMap> km, CoordsPtr out_coords, bool train) {
  Var h = ops::conv(g, x, w, &b, std::move(km), std::move(out_coords));
  h = ops::norm(g, h, np, train);
  return ops::relu(g, h);
}

struct BlockParams {
  Parameter* weight;
  Parameter* bias;
  ops::NormParams norm;
};

inline BlockParams make_block_params(ParameterStore& store, const std::string& name, int kernel,
                                     int in, int out, Rng& rng, double init_scale = 1.0) {
  const int vol = kernel * kernel * kernel;
  Matrix w(static_cast<std::size_t>(vol) * in, out);
  const double bound = init_scale * std::sqrt(6.0 / static_cast<double>(vol * in));
  for (auto& v : w.values()) v = rng.uniform(-bound, bound);
  BlockParams p;
  p.weight = &store.add(name + ".weight", std::move(w));
  p.bias = &store.add(name + ".bias", Matrix(1, out));
  p.norm.gamma = &store.add(name + ".gamma", Matrix(1, out, 1.0));
  p.norm.beta = &store.add(name + ".beta", Matrix(1, out));
  p.norm.running_mean = &store.add(name + ".running_mean", Matrix(1, out), false);
  p.norm.running_var = &store.add(name + ".running_var", Matrix(1, out, 1.0), false);
  return p;
}

inline Var conv_block(Graph& g, const Var& x, const BlockParams& p,
                      std::shared_ptr<const KernelMap> km, CoordsPtr out_coords, bool train) {
  return conv_block(g, x, *p.weight, *p.bias, p.norm, std::move(km), std::move(out_coords), train);
}

inline Var residual_block(Graph& g, const Var& x, const BlockParams& a, const BlockParams& b,
                          const std::shared_ptr<const KernelMap>& km, bool train) {
  Var h = conv_block(g, x, a, km, x.coords, train);
  h = conv_block(g, h, b, km, x.coords, train);
  return ops::add(g, x, h);
}

// Stride-2 conv block onto the coarser level.
inline Var downsample(Graph& g, const Var& x, const BlockParams& p, CoordsPtr coarse, bool train) {
  auto km = std::make_shared<KernelMap>(build_kernel_map(*x.coords, *coarse, 3, 2, false));
  return conv_block(g, x, p, std::move(km), std::move(coarse), train);
}

// Transposed conv block restoring the finer `target` coordinates.
inline Var upsample(Graph& g, const Var& x, const BlockParams& p, CoordsPtr target, bool train) {
  auto km = std::make_shared<KernelMap>(build_kernel_map(*x.coords, *target, 3, 2, true));
  return conv_block(g, x, p, std::move(km), std::move(target), train);
}

// 1^3 convolution, no normalization or activation.
inline Var head(Graph& g, const Var& x, Parameter& w, Parameter& b) {
  auto km = std::make_shared<KernelMap>(build_kernel_map(*x.coords, *x.coords, 1, 1, false));
  return ops::conv(g, x, w, &b, std::move(km), x.coords);
}

}  // namespace layers
}  // namespace hapt3d
