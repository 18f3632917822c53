#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>

#include "mitunet/spatial.hpp"

namespace mitunet {

template <class T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

struct StageConfig {
    long embed_dim = 0;
    long depth = 0;
    long num_heads = 0;
    long sr_ratio = 1;
    int patch_kernel = 3;
    int patch_stride = 2;
    int patch_pad = 1;
};

struct EncoderConfig {
    std::array<StageConfig, 4> stages;
    long mlp_expansion = 4;
    void validate() const;
};

struct DecoderConfig {
    std::vector<long> fusion_channels;  // skip-fusion stages, coarse to fine
    std::vector<long> head_channels;    // post-skip upsampling to full res
    bool use_scse = true;
    long scse_reduction = 4;
    long num_classes = 2;
    void validate() const;
};

struct ModelConfig {
    std::string preset_name;
    EncoderConfig encoder;
    DecoderConfig decoder;
    // Presets: "b0".."b4" follow the SegFormer MiT family; "nano" is the
    // CPU-scale variant used by the test and training harness.
    static ModelConfig preset(const std::string& name);
    void validate() const;
};

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <class T>
struct Conv2dLayer {
    Tensor<T> w, b;
    int stride = 1, pad = 0, groups = 1;
    static Conv2dLayer make(long in_ch, long out_ch, int kernel, int stride, int pad, int groups,
                            bool bias, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x) const;
    void collect(const std::string& prefix, NamedTensors<T>& out);
};

template <class T>
struct LinearLayer {
    Tensor<T> w, b;
    static LinearLayer make(long in_f, long out_f, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x) const;
    void collect(const std::string& prefix, NamedTensors<T>& out);
};

template <class T>
struct LayerNormLayer {
    Tensor<T> g, b;
    T eps = T(1e-6);
    static LayerNormLayer make(long extent);
    Tensor<T> forward(const Tensor<T>& x) const;
    void collect(const std::string& prefix, NamedTensors<T>& out);
};

template <class T>
struct BatchNorm2dLayer {
    Tensor<T> g, b;
    Tensor<T> running_mean, running_var;  // buffers, not trained
    T momentum = T(0.1), eps = T(1e-5);
    static BatchNorm2dLayer make(long channels);
    Tensor<T> forward(const Tensor<T>& x, bool training);
    void collect(const std::string& prefix, NamedTensors<T>& out);
    void collect_buffers(const std::string& prefix, NamedTensors<T>& out);
};

// Strided-convolution patch embedding over an NCHW map, emitting tokens.
template <class T>
struct PatchEmbed {
    Conv2dLayer<T> proj;
    LayerNormLayer<T> norm;
    static PatchEmbed make(long in_ch, const StageConfig& sc, Rng& rng);
    // returns tokens [N, L, C] plus the token grid extents
    std::tuple<Tensor<T>, long, long> forward(const Tensor<T>& x) const;
    void collect(const std::string& prefix, NamedTensors<T>& out);
};

// Multi-head self-attention with optional spatial reduction of keys/values.
template <class T>
struct EfficientAttention {
    LinearLayer<T> q, k, v, proj;
    Conv2dLayer<T> sr;          // kernel = stride = sr_ratio, used when sr_ratio > 1
    LayerNormLayer<T> sr_norm;
    long num_heads = 1, sr_ratio = 1, channels = 0;
    static EfficientAttention make(long channels, long num_heads, long sr_ratio, Rng& rng);
    Tensor<T> forward(const Tensor<T>& tokens, long h, long w) const;
    void collect(const std::string& prefix, NamedTensors<T>& out);
};

// linear -> depthwise 3x3 conv on the token grid -> gelu -> linear.
template <class T>
struct MixFfn {
    LinearLayer<T> fc1, fc2;
    Conv2dLayer<T> dw;
    static MixFfn make(long channels, long expansion, Rng& rng);
    Tensor<T> forward(const Tensor<T>& tokens, long h, long w) const;
    void collect(const std::string& prefix, NamedTensors<T>& out);
};

template <class T>
struct TransformerBlock {
    LayerNormLayer<T> norm1, norm2;
    EfficientAttention<T> attn;
    MixFfn<T> ffn;
    static TransformerBlock make(long channels, long num_heads, long sr_ratio, long expansion,
                                 Rng& rng);
    Tensor<T> forward(const Tensor<T>& tokens, long h, long w) const;
    void collect(const std::string& prefix, NamedTensors<T>& out);
};

template <class T>
struct EncoderStage {
    PatchEmbed<T> patch;
    std::vector<TransformerBlock<T>> blocks;
    LayerNormLayer<T> norm;
    static EncoderStage make(long in_ch, const StageConfig& sc, long expansion, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x) const;  // NCHW in, NCHW out
    void collect(const std::string& prefix, NamedTensors<T>& out);
};

// Concurrent spatial and channel squeeze-excitation; the two sigmoid-gated
// branches are combined additively.
template <class T>
struct ScseBlock {
    LinearLayer<T> fc1, fc2;
    Conv2dLayer<T> spatial;
    long reduction = 4;
    static ScseBlock make(long channels, long reduction, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x) const;
    void collect(const std::string& prefix, NamedTensors<T>& out);
};

template <class T>
struct DecoderBlock {
    Conv2dLayer<T> conv1, conv2;
    BatchNorm2dLayer<T> bn1, bn2;
    std::optional<ScseBlock<T>> scse;
    static DecoderBlock make(long in_ch, long skip_ch, long out_ch, bool use_scse,
                             long scse_reduction, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& skip, bool training);
    void collect(const std::string& prefix, NamedTensors<T>& out);
    void collect_buffers(const std::string& prefix, NamedTensors<T>& out);
};

// ---------------------------------------------------------------------------
// The network
// ---------------------------------------------------------------------------

template <class T>
class MitUNet {
  public:
    MitUNet(const ModelConfig& cfg, uint64_t init_seed);

    // Four NCHW feature maps at strides {4, 8, 16, 32}.
    std::array<Tensor<T>, 4> encoder_forward(const Tensor<T>& image) const;

    // Full-resolution [N, num_classes, H, W] logits.
    Tensor<T> forward(const Tensor<T>& image, bool training);

    NamedTensors<T>& parameters() { return params_; }
    NamedTensors<T>& buffers() { return buffers_; }
    const ModelConfig& config() const { return cfg_; }
    long parameter_count() const;

    long step = 0;

  private:
    ModelConfig cfg_;
    std::vector<EncoderStage<T>> stages_;
    std::vector<DecoderBlock<T>> fuse_;   // with skips, coarse to fine
    std::vector<DecoderBlock<T>> head_;   // no-skip upsampling blocks
    Conv2dLayer<T> classifier_;
    NamedTensors<T> params_;
    NamedTensors<T> buffers_;
};

// ---------------------------------------------------------------------------
// Checkpoint container: "MITU" magic, u32 version, text header with the
// config echo and parameter manifest, then a raw little-endian f32 payload.
// ---------------------------------------------------------------------------

struct Checkpoint {
    uint32_t version = 1;
    std::string preset;
    long num_classes = 2;
    long step = 0;
    std::vector<std::pair<std::string, Shape>> manifest;
    std::vector<float> payload;  // tensors concatenated in manifest order

    static Checkpoint from_model(MitUNet<float>& model);
    static Checkpoint from_model(MitUNet<double>& model);
    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
    // Applies parameters and buffers; rejects name or shape mismatches.
    void apply(MitUNet<float>& model) const;
    void apply(MitUNet<double>& model) const;
};

}  // namespace mitunet
