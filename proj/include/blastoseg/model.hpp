#pragma once

// Residual-Dilated U-Net: depth-4 encoder/decoder with residual blocks,
// a dilated-convolution bottleneck, skip connections, and a 1x1 sigmoid
// head producing one probability map per pixel.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "blastoseg/errors.hpp"
#include "blastoseg/ops.hpp"
#include "blastoseg/tensor.hpp"

namespace blastoseg {

struct ModelConfig {
    int depth = 4;
    int base_kernels = 16;
    std::vector<int> encoder_kernels = {16, 32, 64, 128};
    std::vector<int> decoder_kernels = {128, 64, 32, 16};
    std::vector<int> dilation_rates = {1, 2, 4, 8};
    int bottleneck_channels = 256;
    int input_channels = 1;
    double dropout_rate = 0.05;
    int image_size = 256;

    void validate() const {
        if (depth < 1) throw ConfigError("depth must be >= 1");
        if (static_cast<int>(encoder_kernels.size()) != depth)
            throw ConfigError("encoder_kernels must list exactly depth=" + std::to_string(depth) +
                              " widths");
        std::vector<int> rev(encoder_kernels.rbegin(), encoder_kernels.rend());
        if (decoder_kernels != rev)
            throw ConfigError("decoder_kernels must be the reverse of encoder_kernels");
        for (int k : encoder_kernels)
            if (k < 1) throw ConfigError("kernel counts must be positive");
        if (image_size < 1 || image_size % (1 << depth) != 0)
            throw ConfigError("image_size " + std::to_string(image_size) +
                              " must be divisible by 2^depth = " + std::to_string(1 << depth));
        if (dilation_rates.empty() || dilation_rates.front() != 1)
            throw ConfigError("dilation_rates must start at 1");
        for (std::size_t i = 0; i < dilation_rates.size(); ++i) {
            if (dilation_rates[i] != (1 << i))
                throw ConfigError("dilation_rates must be strictly increasing powers of two");
        }
        if (bottleneck_channels < 1) throw ConfigError("bottleneck_channels must be positive");
        if (input_channels < 1) throw ConfigError("input_channels must be positive");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw ConfigError("dropout_rate must be in [0,1)");
    }

    bool operator==(const ModelConfig&) const = default;
};

// Receptive-field extent of one output pixel in input pixels, derived
// from the layer list: each layer adds (k-1)*dilation*jump, where jump
// is the input stride accumulated so far. Used by the locality tests.
inline index_t receptive_field_extent(const ModelConfig& cfg) {
    index_t e = 0;  // extent - 1
    index_t jump = 1;
    for (int i = 0; i < cfg.depth; ++i) {
        e += 2 * jump;  // conv block 3x3
        e += 1 * jump;  // max pool 2x2
        jump *= 2;
        e += 4 * jump;  // residual block: two 3x3 convs
    }
    for (int d : cfg.dilation_rates) e += 2 * static_cast<index_t>(d) * jump;  // dilated 3x3
    for (int i = 0; i < cfg.depth; ++i) {
        jump /= 2;
        e += 1 * jump;  // up-conv 2x2, stride 2
        e += 2 * jump;  // conv block
        e += 4 * jump;  // residual block
    }
    return e + 1;  // 1x1 head adds nothing
}

namespace detail {

template <typename T>
Tensor<T> he_normal(Shape shape, index_t fan_in, Rng& rng) {
    std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    Tensor<T> t(std::move(shape), T(0), true);
    for (index_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(nd(rng));
    return t;
}

} // namespace detail

// conv 3x3 (same padding) + batch norm + ReLU
template <typename T>
struct ConvBlock {
    Tensor<T> weight, bias;
    BatchNormState<T> bn;

    ConvBlock() = default;
    ConvBlock(index_t in_ch, index_t out_ch, Rng& rng)
        : weight(detail::he_normal<T>({out_ch, in_ch, 3, 3}, in_ch * 9, rng)),
          bias(Tensor<T>({out_ch}, T(0), true)),
          bn(out_ch) {}

    Tensor<T> forward(const Tensor<T>& x, bool training, Tape<T>* tape) {
        auto y = conv2d(x, weight, bias, 1, 1, Padding::kSame, tape);
        y = batchnorm2d(y, bn, training, tape);
        return relu(y, tape);
    }
};

// Two conv+BN layers with an identity shortcut and a trailing ReLU; a
// 1x1 projection stands in for the identity when channel counts differ.
template <typename T>
struct ResidualBlock {
    Tensor<T> weight1, bias1, weight2, bias2;
    BatchNormState<T> bn1, bn2;
    Tensor<T> proj_weight, proj_bias;  // defined only when in_ch != out_ch

    ResidualBlock() = default;
    ResidualBlock(index_t in_ch, index_t out_ch, Rng& rng)
        : weight1(detail::he_normal<T>({out_ch, in_ch, 3, 3}, in_ch * 9, rng)),
          bias1(Tensor<T>({out_ch}, T(0), true)),
          weight2(detail::he_normal<T>({out_ch, out_ch, 3, 3}, out_ch * 9, rng)),
          bias2(Tensor<T>({out_ch}, T(0), true)),
          bn1(out_ch),
          bn2(out_ch) {
        if (in_ch != out_ch) {
            proj_weight = detail::he_normal<T>({out_ch, in_ch, 1, 1}, in_ch, rng);
            proj_bias = Tensor<T>({out_ch}, T(0), true);
        }
    }

    Tensor<T> forward(const Tensor<T>& x, bool training, Tape<T>* tape) {
        auto y = conv2d(x, weight1, bias1, 1, 1, Padding::kSame, tape);
        y = relu(batchnorm2d(y, bn1, training, tape), tape);
        y = conv2d(y, weight2, bias2, 1, 1, Padding::kSame, tape);
        y = batchnorm2d(y, bn2, training, tape);
        Tensor<T> shortcut = proj_weight.defined()
                                 ? conv2d(x, proj_weight, proj_bias, 1, 1, Padding::kSame, tape)
                                 : x;
        return relu(add(y, shortcut, tape), tape);
    }
};

template <typename T>
struct EncoderUnit {
    ConvBlock<T> conv;
    ResidualBlock<T> res;
};

template <typename T>
struct DecoderUnit {
    Tensor<T> up_weight;  // [in_ch, out_ch, 2, 2], stride-2 up-convolution
    BatchNormState<T> up_bn;
    ConvBlock<T> conv;
    ResidualBlock<T> res;
};

template <typename T>
class RDUNet {
public:
    RDUNet() = default;

    static RDUNet build(const ModelConfig& cfg, Rng& rng) {
        cfg.validate();
        RDUNet m;
        m.cfg_ = cfg;
        index_t in_ch = cfg.input_channels;
        for (int i = 0; i < cfg.depth; ++i) {
            const index_t ch = cfg.encoder_kernels[static_cast<std::size_t>(i)];
            EncoderUnit<T> unit;
            unit.conv = ConvBlock<T>(in_ch, ch, rng);
            unit.res = ResidualBlock<T>(ch, ch, rng);
            m.encoder_.push_back(std::move(unit));
            in_ch = ch;
        }
        for (std::size_t j = 0; j < cfg.dilation_rates.size(); ++j) {
            const index_t ch = cfg.bottleneck_channels;
            m.bneck_weights_.push_back(detail::he_normal<T>({ch, in_ch, 3, 3}, in_ch * 9, rng));
            m.bneck_biases_.push_back(Tensor<T>({ch}, T(0), true));
            in_ch = ch;
        }
        for (int i = 0; i < cfg.depth; ++i) {
            const index_t ch = cfg.decoder_kernels[static_cast<std::size_t>(i)];
            DecoderUnit<T> unit;
            unit.up_weight = detail::he_normal<T>({in_ch, ch, 2, 2}, in_ch * 4, rng);
            unit.up_bn = BatchNormState<T>(ch);
            unit.conv = ConvBlock<T>(2 * ch, ch, rng);
            unit.res = ResidualBlock<T>(ch, ch, rng);
            m.decoder_.push_back(std::move(unit));
            in_ch = ch;
        }
        m.head_weight_ = detail::he_normal<T>({1, in_ch, 1, 1}, in_ch, rng);
        m.head_bias_ = Tensor<T>({1}, T(0), true);
        return m;
    }

    // Probability map in (0,1). Deterministic when training == false;
    // training mode needs an RNG for dropout.
    Tensor<T> forward(const Tensor<T>& batch, bool training, Tape<T>* tape = nullptr,
                      Rng* rng = nullptr) {
        detail::require_rank("forward", batch.shape(), 4);
        if (batch.dim(1) != cfg_.input_channels)
            throw DimensionError("forward: expected " + std::to_string(cfg_.input_channels) +
                                 " input channels, got " + std::to_string(batch.dim(1)));
        const index_t div = index_t(1) << cfg_.depth;
        if (batch.dim(2) % div != 0 || batch.dim(3) % div != 0)
            throw DimensionError("forward: spatial dims " + std::to_string(batch.dim(2)) + "x" +
                                 std::to_string(batch.dim(3)) + " not divisible by 2^depth = " +
                                 std::to_string(div));
        if (training && cfg_.dropout_rate > 0.0 && rng == nullptr)
            throw ParameterError("forward: training mode needs an RNG for dropout");

        std::vector<Tensor<T>> skips;
        Tensor<T> x = batch;
        for (auto& unit : encoder_) {
            x = unit.conv.forward(x, training, tape);
            skips.push_back(x);
            x = maxpool2d(x, tape);
            x = unit.res.forward(x, training, tape);
        }
        for (std::size_t j = 0; j < bneck_weights_.size(); ++j) {
            x = conv2d(x, bneck_weights_[j], bneck_biases_[j], 1, cfg_.dilation_rates[j],
                       Padding::kSame, tape);
            x = relu(x, tape);
        }
        if (training && cfg_.dropout_rate > 0.0)
            x = dropout(x, cfg_.dropout_rate, training, *rng, tape);
        for (std::size_t i = 0; i < decoder_.size(); ++i) {
            auto& unit = decoder_[i];
            x = conv2d_transpose(x, unit.up_weight, 2, tape);
            x = batchnorm2d(x, unit.up_bn, training, tape);
            x = concat_channels(x, skips[skips.size() - 1 - i], tape);
            x = unit.conv.forward(x, training, tape);
            x = unit.res.forward(x, training, tape);
        }
        x = conv2d(x, head_weight_, head_bias_, 1, 1, Padding::kSame, tape);
        return sigmoid(x, tape);
    }

    const ModelConfig& config() const { return cfg_; }

    // Trainable parameters in a fixed, stable order.
    std::vector<std::pair<std::string, Tensor<T>>> parameters() {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        visit_params([&](const std::string& name, Tensor<T>& t) { out.emplace_back(name, t); });
        return out;
    }

    // Non-trainable batch-norm running statistics, serialized alongside
    // the parameters so inference is reproducible from a checkpoint.
    std::vector<std::pair<std::string, std::vector<T>*>> buffers() {
        std::vector<std::pair<std::string, std::vector<T>*>> out;
        visit_buffers([&](const std::string& name, std::vector<T>& v) { out.emplace_back(name, &v); });
        return out;
    }

    index_t parameter_count() {
        index_t n = 0;
        visit_params([&](const std::string&, Tensor<T>& t) { n += t.numel(); });
        return n;
    }

private:
    template <typename Fn>
    void visit_bn(const std::string& prefix, BatchNormState<T>& bn, Fn&& fn) {
        fn(prefix + ".gamma", bn.gamma);
        fn(prefix + ".beta", bn.beta);
    }

    template <typename Fn>
    void visit_conv_block(const std::string& prefix, ConvBlock<T>& b, Fn&& fn) {
        fn(prefix + ".weight", b.weight);
        fn(prefix + ".bias", b.bias);
        visit_bn(prefix + ".bn", b.bn, fn);
    }

    template <typename Fn>
    void visit_res_block(const std::string& prefix, ResidualBlock<T>& b, Fn&& fn) {
        fn(prefix + ".conv1.weight", b.weight1);
        fn(prefix + ".conv1.bias", b.bias1);
        visit_bn(prefix + ".bn1", b.bn1, fn);
        fn(prefix + ".conv2.weight", b.weight2);
        fn(prefix + ".conv2.bias", b.bias2);
        visit_bn(prefix + ".bn2", b.bn2, fn);
        if (b.proj_weight.defined()) {
            fn(prefix + ".proj.weight", b.proj_weight);
            fn(prefix + ".proj.bias", b.proj_bias);
        }
    }

    template <typename Fn>
    void visit_params(Fn&& fn) {
        for (std::size_t i = 0; i < encoder_.size(); ++i) {
            const std::string p = "enc" + std::to_string(i + 1);
            visit_conv_block(p + ".conv", encoder_[i].conv, fn);
            visit_res_block(p + ".res", encoder_[i].res, fn);
        }
        for (std::size_t j = 0; j < bneck_weights_.size(); ++j) {
            const std::string p = "bottleneck.conv" + std::to_string(j + 1);
            fn(p + ".weight", bneck_weights_[j]);
            fn(p + ".bias", bneck_biases_[j]);
        }
        for (std::size_t i = 0; i < decoder_.size(); ++i) {
            const std::string p = "dec" + std::to_string(i + 1);
            fn(p + ".up.weight", decoder_[i].up_weight);
            visit_bn(p + ".up.bn", decoder_[i].up_bn, fn);
            visit_conv_block(p + ".conv", decoder_[i].conv, fn);
            visit_res_block(p + ".res", decoder_[i].res, fn);
        }
        fn("head.weight", head_weight_);
        fn("head.bias", head_bias_);
    }

    template <typename Fn>
    void visit_bn_buffers(const std::string& prefix, BatchNormState<T>& bn, Fn&& fn) {
        fn(prefix + ".running_mean", bn.running_mean);
        fn(prefix + ".running_var", bn.running_var);
    }

    template <typename Fn>
    void visit_buffers(Fn&& fn) {
        for (std::size_t i = 0; i < encoder_.size(); ++i) {
            const std::string p = "enc" + std::to_string(i + 1);
            visit_bn_buffers(p + ".conv.bn", encoder_[i].conv.bn, fn);
            visit_bn_buffers(p + ".res.bn1", encoder_[i].res.bn1, fn);
            visit_bn_buffers(p + ".res.bn2", encoder_[i].res.bn2, fn);
        }
        for (std::size_t i = 0; i < decoder_.size(); ++i) {
            const std::string p = "dec" + std::to_string(i + 1);
            visit_bn_buffers(p + ".up.bn", decoder_[i].up_bn, fn);
            visit_bn_buffers(p + ".conv.bn", decoder_[i].conv.bn, fn);
            visit_bn_buffers(p + ".res.bn1", decoder_[i].res.bn1, fn);
            visit_bn_buffers(p + ".res.bn2", decoder_[i].res.bn2, fn);
        }
    }

    ModelConfig cfg_;
    std::vector<EncoderUnit<T>> encoder_;
    std::vector<Tensor<T>> bneck_weights_;
    std::vector<Tensor<T>> bneck_biases_;
    std::vector<DecoderUnit<T>> decoder_;
    Tensor<T> head_weight_, head_bias_;
};

} // namespace blastoseg
