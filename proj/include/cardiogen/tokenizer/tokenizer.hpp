#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cardiogen/media.hpp"
#include "cardiogen/nn/layers.hpp"
#include "cardiogen/numerics/io.hpp"

namespace cardiogen {

enum class QuantizerKind { Lfq, Vq };

struct TokenizerConfig {
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t channels = 1;
    std::size_t frames = 5;  // T + 1
    std::size_t patch_h = 8;
    std::size_t patch_w = 8;
    std::size_t patch_t = 2;
    std::size_t dim = 64;
    std::size_t depth_spatial = 2;
    std::size_t depth_temporal = 2;
    std::size_t heads = 4;
    std::size_t head_dim = 16;
    std::size_t ff_mult = 4;
    QuantizerKind quantizer = QuantizerKind::Lfq;
    std::size_t bits = 10;  // K
    Real beta = Real(0.25);  // VQ codebook loss weight
    // LFQ commitment weight. Values near 0.25 pull every latent onto a few
    // corners of the hypercube and the code usage collapses.
    Real lfq_beta = Real(0.005);

    // Throws ConfigError on any violated extent rule.
    void validate() const;

    std::size_t grid_t() const { return 1 + (frames - 1) / patch_t; }
    std::size_t grid_h() const { return height / patch_h; }
    std::size_t grid_w() const { return width / patch_w; }
    std::size_t sites() const { return grid_h() * grid_w(); }
    std::size_t token_count() const { return grid_t() * sites(); }
    std::size_t vocab() const { return std::size_t{1} << bits; }
    std::size_t first_patch_dim() const { return patch_h * patch_w * channels; }
    std::size_t block_patch_dim() const { return patch_t * patch_h * patch_w * channels; }
    // Frames decoded from temporal token index t: [first, last).
    std::size_t frame_begin(std::size_t t) const { return t == 0 ? 0 : 1 + (t - 1) * patch_t; }
    std::size_t frame_end(std::size_t t) const { return t == 0 ? 1 : 1 + t * patch_t; }

    std::string to_string() const;
};

// Raw pixel patches of one clip before projection. Frame 0 is cut into
// P_h x P_w x C patches; frames 1..T into P_t x P_h x P_w x C blocks. Element
// order inside a patch is (t, y, x, c).
struct PatchSet {
    std::vector<Real> first;  // [sites, first_patch_dim]
    std::vector<Real> rest;   // [(T') * sites, block_patch_dim], temporal-major
};
PatchSet extract_patches(const VideoClip& clip, const TokenizerConfig& cfg);
// Inverse of extract_patches on a flat [(T+1) H W C] pixel index: returns, for
// each pixel, its position in concat(first, rest) flattened.
std::vector<std::size_t> unpatchify_index(const TokenizerConfig& cfg);

struct QuantizeResult {
    std::vector<std::uint32_t> codes;
    // Forward value is the quantized vector; gradient reaches the input
    // unchanged (straight-through).
    Tensor quantized;
};

// Sign quantization of z[N, K]: bit_i = z_i > 0, code = sum bit_i 2^i.
QuantizeResult lfq_quantize(const Tensor& z);
std::uint32_t lfq_code(std::span<const Real> z);
// +1 where the bit is set, -1 elsewhere.
std::vector<Real> lfq_dequantize(std::uint32_t code, std::size_t bits);
// Nearest codebook row by squared Euclidean distance, ties to the lowest index.
QuantizeResult vq_quantize(const Tensor& z, const Tensor& codebook);
std::uint32_t vq_nearest(std::span<const Real> z, std::span<const Real> codebook, std::size_t dim);

struct TokenizerForward {
    Tensor z;             // encoder output [B * (T'+1) * S, D], rows ordered (b, t, s)
    Tensor pre_quant;     // LFQ: projected [N, K]; VQ: same as z
    std::vector<std::uint32_t> codes;
    Tensor quant_loss;    // LFQ commitment or VQ codebook loss (scalar)
    Tensor recon;         // [B, T+1, H, W, C], unclamped
};

class VideoTokenizer {
public:
    VideoTokenizer(const TokenizerConfig& cfg, std::uint64_t seed);

    const TokenizerConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // Patch embeddings [T'+1, S, D] of one clip (projection plus positions).
    Tensor patchify(const VideoClip& clip) const;
    // Pre-quantization latent [T'+1, H', W', D].
    Tensor encode(const VideoClip& clip) const;
    TokenGrid tokenize(const VideoClip& clip) const;
    std::vector<TokenGrid> tokenize(std::span<const VideoClip> clips) const;
    // Decoded clip, clamped to [0, 1].
    VideoClip decode(const TokenGrid& grid) const;
    std::vector<VideoClip> decode(std::span<const TokenGrid> grids) const;

    // Full differentiable pass used in training.
    TokenizerForward forward(std::span<const VideoClip> clips) const;
    // Decoder output [B, T+1, H, W, C] for codes laid out (b, t, s).
    Tensor decode_codes(std::span<const std::uint32_t> codes, std::size_t batch) const;
    // Same, from an already-quantized embedding [N, K] (LFQ) or [N, D] (VQ).
    Tensor decode_quantized(const Tensor& quantized, std::size_t batch) const;

    // Every linear layer, for LoRA targeting.
    std::vector<nn::Linear*> linears();
    // Weights of the decoder output heads.
    std::vector<Tensor> last_layer_params() const;

    void save(const fs::path& dir, const std::map<std::string, std::string>& extra_meta = {}) const;
    static VideoTokenizer load(const fs::path& dir);

private:
    Tensor embed_patches(std::span<const VideoClip> clips) const;
    Tensor encode_rows(std::span<const VideoClip> clips) const;
    Tensor positions(const Tensor& pos_t, const Tensor& pos_s, std::size_t batch) const;
    void check_clip(const VideoClip& clip) const;
    void check_codes(std::span<const std::uint32_t> codes) const;

    TokenizerConfig cfg_;
    std::uint64_t seed_ = 0;
    ParamStore params_;
    nn::Linear patch0_, patch_;
    Tensor enc_pos_t_, enc_pos_s_;
    std::vector<nn::TransformerBlock> enc_spatial_, enc_temporal_;
    nn::LayerNorm enc_norm_;
    nn::Linear quant_in_, quant_out_;
    Tensor codebook_;
    Tensor dec_pos_t_, dec_pos_s_;
    std::vector<nn::TransformerBlock> dec_temporal_, dec_spatial_;
    nn::LayerNorm dec_norm_;
    nn::Linear head0_, head_;
};

TokenizerConfig tokenizer_config_from_meta(const std::map<std::string, std::string>& meta);
std::map<std::string, std::string> tokenizer_config_to_meta(const TokenizerConfig& cfg);

}  // namespace cardiogen
