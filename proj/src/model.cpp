#include "mitunet/model.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>

namespace mitunet {

// ---------------------------------------------------------------------------
// Configs
// ---------------------------------------------------------------------------

void EncoderConfig::validate() const {
    check(stages[0].patch_stride == 4, "encoder: stage 1 patch stride must be 4");
    for (int i = 1; i < 4; ++i)
        check(stages[size_t(i)].patch_stride == 2,
              "encoder: stage " + std::to_string(i + 1) + " patch stride must be 2");
    for (int i = 0; i < 4; ++i) {
        const StageConfig& s = stages[size_t(i)];
        check(s.embed_dim > 0 && s.depth > 0 && s.num_heads > 0 && s.sr_ratio >= 1,
              "encoder: stage " + std::to_string(i + 1) + " has non-positive extents");
        check(s.embed_dim % s.num_heads == 0,
              "encoder: stage " + std::to_string(i + 1) + " embed_dim " +
                  std::to_string(s.embed_dim) + " not divisible by num_heads " +
                  std::to_string(s.num_heads));
    }
    check(mlp_expansion >= 1, "encoder: mlp_expansion must be >= 1");
}

void DecoderConfig::validate() const {
    check(fusion_channels.size() == 3, "decoder: expected 3 skip-fusion stages");
    check(head_channels.size() == 2, "decoder: expected 2 head stages");
    check(num_classes >= 2, "decoder: num_classes must be >= 2");
    for (long c : fusion_channels) check(c > 0, "decoder: non-positive fusion channels");
    for (long c : head_channels) check(c > 0, "decoder: non-positive head channels");
}

void ModelConfig::validate() const {
    encoder.validate();
    decoder.validate();
}

ModelConfig ModelConfig::preset(const std::string& name) {
    auto mk_enc = [](std::array<long, 4> dims, std::array<long, 4> depths,
                     std::array<long, 4> heads, std::array<long, 4> sr) {
        EncoderConfig e;
        std::array<int, 4> kernel = {7, 3, 3, 3};
        std::array<int, 4> stride = {4, 2, 2, 2};
        std::array<int, 4> pad = {3, 1, 1, 1};
        for (int i = 0; i < 4; ++i)
            e.stages[size_t(i)] = {dims[size_t(i)], depths[size_t(i)], heads[size_t(i)],
                                   sr[size_t(i)], kernel[size_t(i)], stride[size_t(i)],
                                   pad[size_t(i)]};
        return e;
    };
    ModelConfig cfg;
    cfg.preset_name = name;
    std::array<long, 4> family_heads = {1, 2, 5, 8};
    std::array<long, 4> family_sr = {8, 4, 2, 1};
    if (name == "nano") {
        cfg.encoder = mk_enc({8, 16, 24, 32}, {1, 1, 1, 1}, {1, 2, 4, 4}, {4, 2, 2, 1});
        cfg.decoder = {{32, 24, 16}, {12, 8}, true, 4, 2};
    } else if (name == "b0") {
        cfg.encoder = mk_enc({32, 64, 160, 256}, {2, 2, 2, 2}, family_heads, family_sr);
        cfg.decoder = {{256, 128, 64}, {32, 16}, true, 8, 2};
    } else if (name == "b1") {
        cfg.encoder = mk_enc({64, 128, 320, 512}, {2, 2, 2, 2}, family_heads, family_sr);
        cfg.decoder = {{256, 128, 64}, {32, 16}, true, 8, 2};
    } else if (name == "b2") {
        cfg.encoder = mk_enc({64, 128, 320, 512}, {3, 4, 6, 3}, family_heads, family_sr);
        cfg.decoder = {{256, 128, 64}, {32, 16}, true, 8, 2};
    } else if (name == "b3") {
        cfg.encoder = mk_enc({64, 128, 320, 512}, {3, 4, 18, 3}, family_heads, family_sr);
        cfg.decoder = {{256, 128, 64}, {32, 16}, true, 8, 2};
    } else if (name == "b4") {
        cfg.encoder = mk_enc({64, 128, 320, 512}, {3, 8, 27, 3}, family_heads, family_sr);
        cfg.decoder = {{256, 128, 64}, {32, 16}, true, 8, 2};
    } else {
        fail("unknown model preset '" + name + "' (expected nano|b0|b1|b2|b3|b4)");
    }
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// Initialization helpers
// ---------------------------------------------------------------------------

namespace {

template <class T>
Tensor<T> conv_weight_init(long out_ch, long in_per_group, int kernel, Rng& rng) {
    // fan-out scaled normal
    long fan_out = out_ch * kernel * kernel;
    double stddev = std::sqrt(2.0 / double(fan_out));
    Tensor<T> w = Tensor<T>::zeros({out_ch, in_per_group, kernel, kernel}, true);
    for (auto& v : w.data()) v = T(rng.normal(0.0, stddev));
    return w;
}

template <class T>
Tensor<T> linear_weight_init(long out_f, long in_f, Rng& rng) {
    // truncated normal, sigma 0.02
    Tensor<T> w = Tensor<T>::zeros({out_f, in_f}, true);
    for (auto& v : w.data()) v = T(rng.truncated_normal(0.02));
    return w;
}

}  // namespace

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <class T>
Conv2dLayer<T> Conv2dLayer<T>::make(long in_ch, long out_ch, int kernel, int stride, int pad,
                                    int groups, bool bias, Rng& rng) {
    Conv2dLayer l;
    l.stride = stride;
    l.pad = pad;
    l.groups = groups;
    l.w = conv_weight_init<T>(out_ch, in_ch / groups, kernel, rng);
    if (bias) l.b = Tensor<T>::zeros({out_ch}, true);
    return l;
}

template <class T>
Tensor<T> Conv2dLayer<T>::forward(const Tensor<T>& x) const {
    return conv2d(x, w, b, {stride, stride}, {pad, pad}, groups);
}

template <class T>
void Conv2dLayer<T>::collect(const std::string& prefix, NamedTensors<T>& out) {
    out.emplace_back(prefix + ".w", w);
    if (b.defined()) out.emplace_back(prefix + ".b", b);
}

template <class T>
LinearLayer<T> LinearLayer<T>::make(long in_f, long out_f, Rng& rng) {
    LinearLayer l;
    l.w = linear_weight_init<T>(out_f, in_f, rng);
    l.b = Tensor<T>::zeros({out_f}, true);
    return l;
}

template <class T>
Tensor<T> LinearLayer<T>::forward(const Tensor<T>& x) const {
    return linear(x, w, b);
}

template <class T>
void LinearLayer<T>::collect(const std::string& prefix, NamedTensors<T>& out) {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
}

template <class T>
LayerNormLayer<T> LayerNormLayer<T>::make(long extent) {
    LayerNormLayer l;
    l.g = Tensor<T>::filled({extent}, T(1), true);
    l.b = Tensor<T>::zeros({extent}, true);
    return l;
}

template <class T>
Tensor<T> LayerNormLayer<T>::forward(const Tensor<T>& x) const {
    return layer_norm(x, g.size(), g, b, eps);
}

template <class T>
void LayerNormLayer<T>::collect(const std::string& prefix, NamedTensors<T>& out) {
    out.emplace_back(prefix + ".g", g);
    out.emplace_back(prefix + ".b", b);
}

template <class T>
BatchNorm2dLayer<T> BatchNorm2dLayer<T>::make(long channels) {
    BatchNorm2dLayer l;
    l.g = Tensor<T>::filled({channels}, T(1), true);
    l.b = Tensor<T>::zeros({channels}, true);
    l.running_mean = Tensor<T>::zeros({channels});
    l.running_var = Tensor<T>::filled({channels}, T(1));
    return l;
}

template <class T>
Tensor<T> BatchNorm2dLayer<T>::forward(const Tensor<T>& x, bool training) {
    return batch_norm2d(x, g, b, running_mean, running_var, training, momentum, eps);
}

template <class T>
void BatchNorm2dLayer<T>::collect(const std::string& prefix, NamedTensors<T>& out) {
    out.emplace_back(prefix + ".g", g);
    out.emplace_back(prefix + ".b", b);
}

template <class T>
void BatchNorm2dLayer<T>::collect_buffers(const std::string& prefix, NamedTensors<T>& out) {
    out.emplace_back(prefix + ".running_mean", running_mean);
    out.emplace_back(prefix + ".running_var", running_var);
}

template <class T>
PatchEmbed<T> PatchEmbed<T>::make(long in_ch, const StageConfig& sc, Rng& rng) {
    PatchEmbed p;
    p.proj = Conv2dLayer<T>::make(in_ch, sc.embed_dim, sc.patch_kernel, sc.patch_stride,
                                  sc.patch_pad, 1, true, rng);
    p.norm = LayerNormLayer<T>::make(sc.embed_dim);
    return p;
}

template <class T>
std::tuple<Tensor<T>, long, long> PatchEmbed<T>::forward(const Tensor<T>& x) const {
    long h = x.dim(2), w = x.dim(3);
    check(h % proj.stride == 0 && w % proj.stride == 0,
          "patch_embed: input extents " + std::to_string(h) + "x" + std::to_string(w) +
              " must be multiples of stride " + std::to_string(proj.stride));
    Tensor<T> grid = proj.forward(x);
    long oh = grid.dim(2), ow = grid.dim(3);
    Tensor<T> tokens = reshape(permute(grid, {0, 2, 3, 1}), {grid.dim(0), oh * ow, grid.dim(1)});
    return {norm.forward(tokens), oh, ow};
}

template <class T>
void PatchEmbed<T>::collect(const std::string& prefix, NamedTensors<T>& out) {
    proj.collect(prefix + ".proj", out);
    norm.collect(prefix + ".norm", out);
}

template <class T>
EfficientAttention<T> EfficientAttention<T>::make(long channels, long num_heads, long sr_ratio,
                                                  Rng& rng) {
    EfficientAttention a;
    a.channels = channels;
    a.num_heads = num_heads;
    a.sr_ratio = sr_ratio;
    a.q = LinearLayer<T>::make(channels, channels, rng);
    a.k = LinearLayer<T>::make(channels, channels, rng);
    a.v = LinearLayer<T>::make(channels, channels, rng);
    a.proj = LinearLayer<T>::make(channels, channels, rng);
    if (sr_ratio > 1) {
        a.sr = Conv2dLayer<T>::make(channels, channels, int(sr_ratio), int(sr_ratio), 0, 1, true,
                                    rng);
        a.sr_norm = LayerNormLayer<T>::make(channels);
    }
    return a;
}

template <class T>
Tensor<T> EfficientAttention<T>::forward(const Tensor<T>& tokens, long h, long w) const {
    long n = tokens.dim(0), l = tokens.dim(1), c = tokens.dim(2);
    check(l == h * w, "attention: token count " + std::to_string(l) + " != grid " +
                          std::to_string(h) + "x" + std::to_string(w));
    check(c == channels, "attention: channel extent mismatch");
    long dh = c / num_heads;

    auto to_heads = [&](const Tensor<T>& t) {
        return permute(reshape(t, {n, t.dim(1), num_heads, dh}), {0, 2, 1, 3});
    };

    Tensor<T> qh = to_heads(q.forward(tokens));
    Tensor<T> kv_tokens = tokens;
    if (sr_ratio > 1) {
        check(h % sr_ratio == 0 && w % sr_ratio == 0,
              "attention: sr_ratio " + std::to_string(sr_ratio) + " does not divide grid " +
                  std::to_string(h) + "x" + std::to_string(w));
        Tensor<T> grid = permute(reshape(tokens, {n, h, w, c}), {0, 3, 1, 2});
        Tensor<T> red = sr.forward(grid);
        kv_tokens = sr_norm.forward(
            reshape(permute(red, {0, 2, 3, 1}), {n, red.dim(2) * red.dim(3), c}));
    }
    Tensor<T> kh = to_heads(k.forward(kv_tokens));
    Tensor<T> vh = to_heads(v.forward(kv_tokens));
    Tensor<T> out = scaled_dot_product_attention(qh, kh, vh);
    return proj.forward(reshape(permute(out, {0, 2, 1, 3}), {n, l, c}));
}

template <class T>
void EfficientAttention<T>::collect(const std::string& prefix, NamedTensors<T>& out) {
    q.collect(prefix + ".q", out);
    k.collect(prefix + ".k", out);
    v.collect(prefix + ".v", out);
    proj.collect(prefix + ".proj", out);
    if (sr_ratio > 1) {
        sr.collect(prefix + ".sr", out);
        sr_norm.collect(prefix + ".sr_norm", out);
    }
}

template <class T>
MixFfn<T> MixFfn<T>::make(long channels, long expansion, Rng& rng) {
    MixFfn f;
    long hidden = channels * expansion;
    f.fc1 = LinearLayer<T>::make(channels, hidden, rng);
    f.dw = Conv2dLayer<T>::make(hidden, hidden, 3, 1, 1, int(hidden), true, rng);
    f.fc2 = LinearLayer<T>::make(hidden, channels, rng);
    return f;
}

template <class T>
Tensor<T> MixFfn<T>::forward(const Tensor<T>& tokens, long h, long w) const {
    long n = tokens.dim(0), l = tokens.dim(1);
    check(l == h * w, "mix_ffn: token count " + std::to_string(l) + " != grid " +
                          std::to_string(h) + "x" + std::to_string(w));
    Tensor<T> hid = fc1.forward(tokens);
    long e = hid.dim(2);
    Tensor<T> grid = permute(reshape(hid, {n, h, w, e}), {0, 3, 1, 2});
    Tensor<T> mixed = reshape(permute(dw.forward(grid), {0, 2, 3, 1}), {n, l, e});
    return fc2.forward(gelu(mixed));
}

template <class T>
void MixFfn<T>::collect(const std::string& prefix, NamedTensors<T>& out) {
    fc1.collect(prefix + ".fc1", out);
    dw.collect(prefix + ".dw", out);
    fc2.collect(prefix + ".fc2", out);
}

template <class T>
TransformerBlock<T> TransformerBlock<T>::make(long channels, long num_heads, long sr_ratio,
                                              long expansion, Rng& rng) {
    TransformerBlock b;
    b.norm1 = LayerNormLayer<T>::make(channels);
    b.attn = EfficientAttention<T>::make(channels, num_heads, sr_ratio, rng);
    b.norm2 = LayerNormLayer<T>::make(channels);
    b.ffn = MixFfn<T>::make(channels, expansion, rng);
    return b;
}

template <class T>
Tensor<T> TransformerBlock<T>::forward(const Tensor<T>& tokens, long h, long w) const {
    Tensor<T> x = add(tokens, attn.forward(norm1.forward(tokens), h, w));
    return add(x, ffn.forward(norm2.forward(x), h, w));
}

template <class T>
void TransformerBlock<T>::collect(const std::string& prefix, NamedTensors<T>& out) {
    norm1.collect(prefix + ".norm1", out);
    attn.collect(prefix + ".attn", out);
    norm2.collect(prefix + ".norm2", out);
    ffn.collect(prefix + ".ffn", out);
}

template <class T>
EncoderStage<T> EncoderStage<T>::make(long in_ch, const StageConfig& sc, long expansion,
                                      Rng& rng) {
    EncoderStage s;
    s.patch = PatchEmbed<T>::make(in_ch, sc, rng);
    for (long i = 0; i < sc.depth; ++i)
        s.blocks.push_back(
            TransformerBlock<T>::make(sc.embed_dim, sc.num_heads, sc.sr_ratio, expansion, rng));
    s.norm = LayerNormLayer<T>::make(sc.embed_dim);
    return s;
}

template <class T>
Tensor<T> EncoderStage<T>::forward(const Tensor<T>& x) const {
    auto [tokens, h, w] = patch.forward(x);
    for (const auto& b : blocks) tokens = b.forward(tokens, h, w);
    tokens = norm.forward(tokens);
    long n = tokens.dim(0), c = tokens.dim(2);
    return permute(reshape(tokens, {n, h, w, c}), {0, 3, 1, 2});
}

template <class T>
void EncoderStage<T>::collect(const std::string& prefix, NamedTensors<T>& out) {
    patch.collect(prefix + ".patch", out);
    for (size_t i = 0; i < blocks.size(); ++i)
        blocks[i].collect(prefix + ".block" + std::to_string(i), out);
    norm.collect(prefix + ".norm", out);
}

template <class T>
ScseBlock<T> ScseBlock<T>::make(long channels, long reduction, Rng& rng) {
    check(channels >= reduction, "scse: channel extent " + std::to_string(channels) +
                                     " smaller than reduction " + std::to_string(reduction));
    check(channels % reduction == 0, "scse: channel extent " + std::to_string(channels) +
                                         " not divisible by reduction " +
                                         std::to_string(reduction));
    ScseBlock s;
    s.reduction = reduction;
    s.fc1 = LinearLayer<T>::make(channels, channels / reduction, rng);
    s.fc2 = LinearLayer<T>::make(channels / reduction, channels, rng);
    s.spatial = Conv2dLayer<T>::make(channels, 1, 1, 1, 0, 1, true, rng);
    return s;
}

template <class T>
Tensor<T> ScseBlock<T>::forward(const Tensor<T>& x) const {
    long n = x.dim(0), c = x.dim(1);
    Tensor<T> pooled = reshape(global_avg_pool(x), {n, c});
    Tensor<T> gate_c = sigmoid(fc2.forward(relu(fc1.forward(pooled))));
    Tensor<T> cse = mul(x, reshape(gate_c, {n, c, 1, 1}));
    Tensor<T> gate_s = sigmoid(spatial.forward(x));  // [N,1,H,W]
    Tensor<T> sse = mul(x, gate_s);
    return add(cse, sse);
}

template <class T>
void ScseBlock<T>::collect(const std::string& prefix, NamedTensors<T>& out) {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
    spatial.collect(prefix + ".spatial", out);
}

template <class T>
DecoderBlock<T> DecoderBlock<T>::make(long in_ch, long skip_ch, long out_ch, bool use_scse,
                                      long scse_reduction, Rng& rng) {
    DecoderBlock d;
    d.conv1 = Conv2dLayer<T>::make(in_ch + skip_ch, out_ch, 3, 1, 1, 1, false, rng);
    d.bn1 = BatchNorm2dLayer<T>::make(out_ch);
    d.conv2 = Conv2dLayer<T>::make(out_ch, out_ch, 3, 1, 1, 1, false, rng);
    d.bn2 = BatchNorm2dLayer<T>::make(out_ch);
    if (use_scse) d.scse = ScseBlock<T>::make(out_ch, scse_reduction, rng);
    return d;
}

template <class T>
Tensor<T> DecoderBlock<T>::forward(const Tensor<T>& x, const Tensor<T>& skip, bool training) {
    Tensor<T> up = bilinear_upsample(x, 2);
    if (skip.defined()) {
        check(skip.dim(2) == up.dim(2) && skip.dim(3) == up.dim(3),
              "decoder_block: upsampled extent " + std::to_string(up.dim(2)) + "x" +
                  std::to_string(up.dim(3)) + " does not match skip " +
                  std::to_string(skip.dim(2)) + "x" + std::to_string(skip.dim(3)));
        up = concat(std::vector<Tensor<T>>{up, skip}, 1);
    }
    Tensor<T> y = relu(bn1.forward(conv1.forward(up), training));
    y = relu(bn2.forward(conv2.forward(y), training));
    if (scse) y = scse->forward(y);
    return y;
}

template <class T>
void DecoderBlock<T>::collect(const std::string& prefix, NamedTensors<T>& out) {
    conv1.collect(prefix + ".conv1", out);
    bn1.collect(prefix + ".bn1", out);
    conv2.collect(prefix + ".conv2", out);
    bn2.collect(prefix + ".bn2", out);
    if (scse) scse->collect(prefix + ".scse", out);
}

template <class T>
void DecoderBlock<T>::collect_buffers(const std::string& prefix, NamedTensors<T>& out) {
    bn1.collect_buffers(prefix + ".bn1", out);
    bn2.collect_buffers(prefix + ".bn2", out);
}

// ---------------------------------------------------------------------------
// MitUNet
// ---------------------------------------------------------------------------

template <class T>
MitUNet<T>::MitUNet(const ModelConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(init_seed);
    long in_ch = 3;
    for (int i = 0; i < 4; ++i) {
        stages_.push_back(EncoderStage<T>::make(in_ch, cfg_.encoder.stages[size_t(i)],
                                                cfg_.encoder.mlp_expansion, rng));
        in_ch = cfg_.encoder.stages[size_t(i)].embed_dim;
    }
    const auto& dec = cfg_.decoder;
    std::array<long, 4> dims;
    for (int i = 0; i < 4; ++i) dims[size_t(i)] = cfg_.encoder.stages[size_t(i)].embed_dim;
    long cur = dims[3];
    for (int i = 0; i < 3; ++i) {
        long skip = dims[size_t(2 - i)];
        fuse_.push_back(DecoderBlock<T>::make(cur, skip, dec.fusion_channels[size_t(i)],
                                              dec.use_scse, dec.scse_reduction, rng));
        cur = dec.fusion_channels[size_t(i)];
    }
    for (int i = 0; i < 2; ++i) {
        head_.push_back(DecoderBlock<T>::make(cur, 0, dec.head_channels[size_t(i)], dec.use_scse,
                                              dec.scse_reduction, rng));
        cur = dec.head_channels[size_t(i)];
    }
    classifier_ = Conv2dLayer<T>::make(cur, dec.num_classes, 1, 1, 0, 1, true, rng);

    for (size_t i = 0; i < stages_.size(); ++i)
        stages_[i].collect("encoder.stage" + std::to_string(i), params_);
    for (size_t i = 0; i < fuse_.size(); ++i)
        fuse_[i].collect("decoder.fuse" + std::to_string(i), params_);
    for (size_t i = 0; i < head_.size(); ++i)
        head_[i].collect("decoder.head" + std::to_string(i), params_);
    classifier_.collect("decoder.classifier", params_);
    for (size_t i = 0; i < fuse_.size(); ++i)
        fuse_[i].collect_buffers("decoder.fuse" + std::to_string(i), buffers_);
    for (size_t i = 0; i < head_.size(); ++i)
        head_[i].collect_buffers("decoder.head" + std::to_string(i), buffers_);
}

template <class T>
std::array<Tensor<T>, 4> MitUNet<T>::encoder_forward(const Tensor<T>& image) const {
    check(image.rank() == 4 && image.dim(1) == 3,
          "encoder: input must be [N,3,H,W], got " + shape_str(image.shape()));
    check(image.dim(2) % 32 == 0 && image.dim(3) % 32 == 0,
          "encoder: input extents " + std::to_string(image.dim(2)) + "x" +
              std::to_string(image.dim(3)) + " must be multiples of 32");
    std::array<Tensor<T>, 4> feats;
    Tensor<T> x = image;
    for (int i = 0; i < 4; ++i) {
        x = stages_[size_t(i)].forward(x);
        feats[size_t(i)] = x;
    }
    return feats;
}

template <class T>
Tensor<T> MitUNet<T>::forward(const Tensor<T>& image, bool training) {
    auto feats = encoder_forward(image);
    Tensor<T> x = feats[3];
    for (int i = 0; i < 3; ++i) x = fuse_[size_t(i)].forward(x, feats[size_t(2 - i)], training);
    for (int i = 0; i < 2; ++i) x = head_[size_t(i)].forward(x, Tensor<T>{}, training);
    return classifier_.forward(x);
}

template <class T>
long MitUNet<T>::parameter_count() const {
    long n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
}

template struct Conv2dLayer<float>;
template struct Conv2dLayer<double>;
template struct LinearLayer<float>;
template struct LinearLayer<double>;
template struct LayerNormLayer<float>;
template struct LayerNormLayer<double>;
template struct BatchNorm2dLayer<float>;
template struct BatchNorm2dLayer<double>;
template struct PatchEmbed<float>;
template struct PatchEmbed<double>;
template struct EfficientAttention<float>;
template struct EfficientAttention<double>;
template struct MixFfn<float>;
template struct MixFfn<double>;
template struct TransformerBlock<float>;
template struct TransformerBlock<double>;
template struct EncoderStage<float>;
template struct EncoderStage<double>;
template struct ScseBlock<float>;
template struct ScseBlock<double>;
template struct DecoderBlock<float>;
template struct DecoderBlock<double>;
template class MitUNet<float>;
template class MitUNet<double>;

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

namespace {

template <class T>
Checkpoint checkpoint_from(MitUNet<T>& model) {
    Checkpoint ck;
    ck.preset = model.config().preset_name;
    ck.num_classes = model.config().decoder.num_classes;
    ck.step = model.step;
    auto push = [&](NamedTensors<T>& ts) {
        for (auto& [name, t] : ts) {
            ck.manifest.emplace_back(name, t.shape());
            for (T v : t.data()) ck.payload.push_back(float(v));
        }
    };
    push(model.parameters());
    push(model.buffers());
    return ck;
}

template <class T>
void checkpoint_apply(const Checkpoint& ck, MitUNet<T>& model) {
    std::map<std::string, std::pair<Shape, long>> index;  // name -> shape, payload offset
    long off = 0;
    for (const auto& [name, shape] : ck.manifest) {
        index[name] = {shape, off};
        off += numel(shape);
    }
    check(off == long(ck.payload.size()), "checkpoint: manifest/payload length mismatch");
    size_t applied = 0;
    auto pull = [&](NamedTensors<T>& ts) {
        for (auto& [name, t] : ts) {
            auto it = index.find(name);
            check(it != index.end(), "checkpoint: missing parameter '" + name + "'");
            check(it->second.first == t.shape(),
                  "checkpoint: shape mismatch for '" + name + "': " +
                      shape_str(it->second.first) + " vs " + shape_str(t.shape()));
            const float* src = ck.payload.data() + it->second.second;
            for (size_t i = 0; i < t.data().size(); ++i) t.data()[i] = T(src[i]);
            ++applied;
        }
    };
    pull(model.parameters());
    pull(model.buffers());
    check(applied == ck.manifest.size(),
          "checkpoint: manifest has " + std::to_string(ck.manifest.size()) +
              " tensors but model consumed " + std::to_string(applied));
    model.step = ck.step;
}

void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                          (unsigned char)((v >> 16) & 0xff), (unsigned char)((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

}  // namespace

Checkpoint Checkpoint::from_model(MitUNet<float>& model) { return checkpoint_from(model); }
Checkpoint Checkpoint::from_model(MitUNet<double>& model) { return checkpoint_from(model); }
void Checkpoint::apply(MitUNet<float>& model) const { checkpoint_apply(*this, model); }
void Checkpoint::apply(MitUNet<double>& model) const { checkpoint_apply(*this, model); }

void Checkpoint::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    check(bool(os), "checkpoint: cannot open '" + path + "' for writing");
    os.write("MITU", 4);
    write_u32(os, version);
    std::ostringstream hdr;
    hdr << "preset = " << preset << "\n";
    hdr << "num_classes = " << num_classes << "\n";
    hdr << "step = " << step << "\n";
    long off = 0;
    for (const auto& [name, shape] : manifest) {
        hdr << "param " << name << " " << shape.size();
        for (long d : shape) hdr << " " << d;
        hdr << " " << off << "\n";
        off += numel(shape);
    }
    std::string h = hdr.str();
    write_u32(os, uint32_t(h.size()));
    os.write(h.data(), long(h.size()));
    static_assert(sizeof(float) == 4);
    os.write(reinterpret_cast<const char*>(payload.data()), long(payload.size() * 4));
    check(bool(os), "checkpoint: write to '" + path + "' failed");
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(bool(is), "checkpoint: cannot open '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    check(is && std::memcmp(magic, "MITU", 4) == 0, "checkpoint: bad magic in '" + path + "'");
    Checkpoint ck;
    ck.version = read_u32(is);
    check(ck.version == 1, "checkpoint: unsupported format version " + std::to_string(ck.version));
    uint32_t hlen = read_u32(is);
    std::string hdr(hlen, '\0');
    is.read(hdr.data(), hlen);
    check(bool(is), "checkpoint: truncated header in '" + path + "'");
    std::istringstream hs(hdr);
    std::string line;
    long total = 0;
    while (std::getline(hs, line)) {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "preset") {
            std::string eq;
            ls >> eq >> ck.preset;
        } else if (key == "num_classes") {
            std::string eq;
            ls >> eq >> ck.num_classes;
        } else if (key == "step") {
            std::string eq;
            ls >> eq >> ck.step;
        } else if (key == "param") {
            std::string name;
            size_t ndim;
            ls >> name >> ndim;
            Shape s(ndim);
            for (auto& d : s) ls >> d;
            long off;
            ls >> off;
            check(bool(ls), "checkpoint: malformed manifest line '" + line + "'");
            check(off == total, "checkpoint: non-contiguous offset for '" + name + "'");
            for (const auto& [n2, s2] : ck.manifest)
                check(n2 != name, "checkpoint: duplicate parameter '" + name + "'");
            ck.manifest.emplace_back(name, s);
            total += numel(s);
        } else if (!key.empty()) {
            fail("checkpoint: unknown header key '" + key + "'");
        }
    }
    ck.payload.resize(size_t(total));
    is.read(reinterpret_cast<char*>(ck.payload.data()), total * 4);
    check(bool(is), "checkpoint: truncated payload in '" + path + "'");
    return ck;
}

}  // namespace mitunet
