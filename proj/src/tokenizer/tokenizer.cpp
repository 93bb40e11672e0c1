#include "cardiogen/tokenizer/tokenizer.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "cardiogen/losses/losses.hpp"

namespace cardiogen {

namespace {

std::string extent_msg(const char* what, std::size_t value, const char* by, std::size_t divisor) {
    return std::string(what) + "=" + std::to_string(value) + " is not divisible by " + by + "=" +
           std::to_string(divisor);
}

// Row index gather: picks whole rows of x[N, D].
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    const std::size_t d = x.numel() / x.dim(0);
    std::vector<std::size_t> index(rows.size() * d);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t j = 0; j < d; ++j) {
            index[r * d + j] = rows[r] * d + j;
        }
    }
    return ops::gather(x, std::move(index), {rows.size(), d});
}

// Pixel index into concat(first patches, block patches) for a batch.
std::vector<std::size_t> pixel_index(const TokenizerConfig& cfg, std::size_t batch) {
    const std::size_t S = cfg.sites(), Tb = cfg.grid_t() - 1, gw = cfg.grid_w();
    const std::size_t p0 = cfg.first_patch_dim(), p = cfg.block_patch_dim();
    const std::size_t ph = cfg.patch_h, pw = cfg.patch_w, C = cfg.channels;
    const std::size_t first_total = batch * S * p0;
    std::vector<std::size_t> index;
    index.reserve(batch * cfg.frames * cfg.height * cfg.width * C);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t f = 0; f < cfg.frames; ++f) {
            for (std::size_t y = 0; y < cfg.height; ++y) {
                for (std::size_t x = 0; x < cfg.width; ++x) {
                    const std::size_t s = (y / ph) * gw + x / pw;
                    for (std::size_t c = 0; c < C; ++c) {
                        if (f == 0) {
                            index.push_back((b * S + s) * p0 + ((y % ph) * pw + x % pw) * C + c);
                        } else {
                            const std::size_t tb = (f - 1) / cfg.patch_t, ft = (f - 1) % cfg.patch_t;
                            const std::size_t within = ((ft * ph + y % ph) * pw + x % pw) * C + c;
                            index.push_back(first_total + ((b * Tb + tb) * S + s) * p + within);
                        }
                    }
                }
            }
        }
    }
    return index;
}

const char* quantizer_name(QuantizerKind q) { return q == QuantizerKind::Lfq ? "lfq" : "vq"; }

}  // namespace

void TokenizerConfig::validate() const {
    if (height == 0 || width == 0 || channels == 0 || frames == 0 || patch_h == 0 || patch_w == 0 ||
        patch_t == 0 || dim == 0 || heads == 0 || head_dim == 0 || ff_mult == 0) {
        throw ConfigError("tokenizer extents must all be positive");
    }
    if (height % patch_h != 0) {
        throw ConfigError(extent_msg("height", height, "patch_h", patch_h));
    }
    if (width % patch_w != 0) {
        throw ConfigError(extent_msg("width", width, "patch_w", patch_w));
    }
    if (frames < 1 + patch_t) {
        throw ConfigError("frames=" + std::to_string(frames) + " must be at least 1 + patch_t=" +
                          std::to_string(1 + patch_t));
    }
    if ((frames - 1) % patch_t != 0) {
        throw ConfigError(extent_msg("frames - 1", frames - 1, "patch_t", patch_t));
    }
    if (bits == 0 || bits > 16) {
        throw ConfigError("bits=" + std::to_string(bits) + " must be in [1, 16]");
    }
    if (!(beta >= 0) || !(lfq_beta >= 0)) {
        throw ConfigError("beta and lfq_beta must be non-negative");
    }
}

std::string TokenizerConfig::to_string() const {
    std::ostringstream os;
    for (const auto& [k, v] : tokenizer_config_to_meta(*this)) {
        os << k << "=" << v << "\n";
    }
    return os.str();
}

std::map<std::string, std::string> tokenizer_config_to_meta(const TokenizerConfig& c) {
    std::ostringstream beta, lfq_beta;
    beta.precision(9);
    beta << c.beta;
    lfq_beta.precision(9);
    lfq_beta << c.lfq_beta;
    return {{"height", std::to_string(c.height)},
            {"width", std::to_string(c.width)},
            {"channels", std::to_string(c.channels)},
            {"frames", std::to_string(c.frames)},
            {"patch_h", std::to_string(c.patch_h)},
            {"patch_w", std::to_string(c.patch_w)},
            {"patch_t", std::to_string(c.patch_t)},
            {"dim", std::to_string(c.dim)},
            {"depth_spatial", std::to_string(c.depth_spatial)},
            {"depth_temporal", std::to_string(c.depth_temporal)},
            {"heads", std::to_string(c.heads)},
            {"head_dim", std::to_string(c.head_dim)},
            {"ff_mult", std::to_string(c.ff_mult)},
            {"quantizer", quantizer_name(c.quantizer)},
            {"bits", std::to_string(c.bits)},
            {"beta", beta.str()},
            {"lfq_beta", lfq_beta.str()}};
}

TokenizerConfig tokenizer_config_from_meta(const std::map<std::string, std::string>& meta) {
    auto get = [&](const char* k) -> const std::string& {
        auto it = meta.find(k);
        if (it == meta.end()) {
            throw IoError(std::string("tokenizer checkpoint lacks '") + k + "'");
        }
        return it->second;
    };
    auto num = [&](const char* k) { return static_cast<std::size_t>(std::stoull(get(k))); };
    TokenizerConfig c;
    c.height = num("height");
    c.width = num("width");
    c.channels = num("channels");
    c.frames = num("frames");
    c.patch_h = num("patch_h");
    c.patch_w = num("patch_w");
    c.patch_t = num("patch_t");
    c.dim = num("dim");
    c.depth_spatial = num("depth_spatial");
    c.depth_temporal = num("depth_temporal");
    c.heads = num("heads");
    c.head_dim = num("head_dim");
    c.ff_mult = num("ff_mult");
    const auto& q = get("quantizer");
    if (q != "lfq" && q != "vq") {
        throw IoError("unknown quantizer '" + q + "' in tokenizer checkpoint");
    }
    c.quantizer = q == "lfq" ? QuantizerKind::Lfq : QuantizerKind::Vq;
    c.bits = num("bits");
    c.beta = static_cast<Real>(std::stod(get("beta")));
    c.lfq_beta = static_cast<Real>(std::stod(get("lfq_beta")));
    c.validate();
    return c;
}

PatchSet extract_patches(const VideoClip& clip, const TokenizerConfig& cfg) {
    if (clip.frames != cfg.frames || clip.height != cfg.height || clip.width != cfg.width ||
        clip.channels != cfg.channels) {
        throw ShapeError("clip " + std::to_string(clip.frames) + "x" + std::to_string(clip.height) + "x" +
                         std::to_string(clip.width) + "x" + std::to_string(clip.channels) +
                         " does not match tokenizer config " + std::to_string(cfg.frames) + "x" +
                         std::to_string(cfg.height) + "x" + std::to_string(cfg.width) + "x" +
                         std::to_string(cfg.channels));
    }
    const std::size_t S = cfg.sites(), Tb = cfg.grid_t() - 1;
    const std::size_t p0 = cfg.first_patch_dim(), p = cfg.block_patch_dim();
    PatchSet out;
    out.first.assign(S * p0, 0);
    out.rest.assign(Tb * S * p, 0);
    const auto index = pixel_index(cfg, 1);
    for (std::size_t i = 0; i < index.size(); ++i) {
        const std::size_t k = index[i];
        if (k < out.first.size()) {
            out.first[k] = clip.pixels[i];
        } else {
            out.rest[k - out.first.size()] = clip.pixels[i];
        }
    }
    return out;
}

std::vector<std::size_t> unpatchify_index(const TokenizerConfig& cfg) { return pixel_index(cfg, 1); }

std::uint32_t lfq_code(std::span<const Real> z) {
    std::uint32_t code = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (z[i] > 0) {
            code |= std::uint32_t{1} << i;
        }
    }
    return code;
}

std::vector<Real> lfq_dequantize(std::uint32_t code, std::size_t bits) {
    if (bits < 32 && code >> bits) {
        throw ConfigError("code " + std::to_string(code) + " does not fit in " + std::to_string(bits) + " bits");
    }
    std::vector<Real> v(bits);
    for (std::size_t i = 0; i < bits; ++i) {
        v[i] = (code >> i) & 1u ? Real(1) : Real(-1);
    }
    return v;
}

QuantizeResult lfq_quantize(const Tensor& z) {
    if (z.rank() != 2) {
        throw ShapeError("lfq_quantize expects [N, K], got " + shape_str(z.shape()));
    }
    const std::size_t n = z.dim(0), k = z.dim(1);
    QuantizeResult r;
    r.codes.resize(n);
    std::vector<Real> q(n * k);
    auto zd = z.data();
    for (std::size_t i = 0; i < n; ++i) {
        r.codes[i] = lfq_code(zd.subspan(i * k, k));
        for (std::size_t j = 0; j < k; ++j) {
            q[i * k + j] = zd[i * k + j] > 0 ? Real(1) : Real(-1);
        }
    }
    r.quantized = ops::straight_through(z, std::move(q));
    return r;
}

std::uint32_t vq_nearest(std::span<const Real> z, std::span<const Real> codebook, std::size_t dim) {
    if (codebook.empty()) {
        throw ConfigError("VQ codebook is empty");
    }
    const std::size_t rows = codebook.size() / dim;
    std::uint32_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < rows; ++r) {
        double d = 0;
        for (std::size_t j = 0; j < dim; ++j) {
            const double diff = static_cast<double>(z[j]) - codebook[r * dim + j];
            d += diff * diff;
        }
        if (d < best_d) {
            best_d = d;
            best = static_cast<std::uint32_t>(r);
        }
    }
    return best;
}

QuantizeResult vq_quantize(const Tensor& z, const Tensor& codebook) {
    if (!codebook.defined() || codebook.rank() != 2) {
        throw ConfigError("VQ codebook must be a [rows, D] tensor");
    }
    if (z.rank() != 2 || z.dim(1) != codebook.dim(1)) {
        throw ShapeError("vq_quantize: z " + shape_str(z.shape()) + " against codebook " +
                         shape_str(codebook.shape()));
    }
    const std::size_t n = z.dim(0), d = z.dim(1);
    QuantizeResult r;
    r.codes.resize(n);
    std::vector<Real> q(n * d);
    auto zd = z.data();
    auto cb = codebook.data();
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = vq_nearest(zd.subspan(i * d, d), cb, d);
        r.codes[i] = c;
        std::copy(cb.begin() + static_cast<std::ptrdiff_t>(c * d),
                  cb.begin() + static_cast<std::ptrdiff_t>((c + 1) * d), q.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    r.quantized = ops::straight_through(z, std::move(q));
    return r;
}

VideoTokenizer::VideoTokenizer(const TokenizerConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
    cfg_.validate();
    Rng rng(seed);
    const std::size_t D = cfg_.dim, T = cfg_.grid_t(), S = cfg_.sites();
    patch0_ = nn::Linear(params_, "enc.patch0", cfg_.first_patch_dim(), D, rng);
    patch_ = nn::Linear(params_, "enc.patch", cfg_.block_patch_dim(), D, rng);
    enc_pos_t_ = params_.add_normal("enc.pos_t", {T, D}, rng, 0.02);
    enc_pos_s_ = params_.add_normal("enc.pos_s", {S, D}, rng, 0.02);
    const nn::BlockConfig enc_block{D, cfg_.heads, cfg_.head_dim, cfg_.ff_mult,
                                    cfg_.depth_spatial + cfg_.depth_temporal};
    for (std::size_t i = 0; i < cfg_.depth_spatial; ++i) {
        enc_spatial_.emplace_back(params_, "enc.spatial." + std::to_string(i), enc_block, rng);
    }
    for (std::size_t i = 0; i < cfg_.depth_temporal; ++i) {
        enc_temporal_.emplace_back(params_, "enc.temporal." + std::to_string(i), enc_block, rng);
    }
    enc_norm_ = nn::LayerNorm(params_, "enc.norm", D);
    if (cfg_.quantizer == QuantizerKind::Lfq) {
        quant_in_ = nn::Linear(params_, "quant.in", D, cfg_.bits, rng, -1, false);
        quant_out_ = nn::Linear(params_, "quant.out", cfg_.bits, D, rng);
    } else {
        codebook_ = params_.add_normal("quant.codebook", {cfg_.vocab(), D}, rng, 1.0);
    }
    dec_pos_t_ = params_.add_normal("dec.pos_t", {T, D}, rng, 0.02);
    dec_pos_s_ = params_.add_normal("dec.pos_s", {S, D}, rng, 0.02);
    for (std::size_t i = 0; i < cfg_.depth_temporal; ++i) {
        dec_temporal_.emplace_back(params_, "dec.temporal." + std::to_string(i), enc_block, rng);
    }
    for (std::size_t i = 0; i < cfg_.depth_spatial; ++i) {
        dec_spatial_.emplace_back(params_, "dec.spatial." + std::to_string(i), enc_block, rng);
    }
    dec_norm_ = nn::LayerNorm(params_, "dec.norm", D);
    const double head_std = 0.1 / std::sqrt(static_cast<double>(D));
    head0_ = nn::Linear(params_, "dec.head0", D, cfg_.first_patch_dim(), rng, head_std);
    head_ = nn::Linear(params_, "dec.head", D, cfg_.block_patch_dim(), rng, head_std);
    // Start the output near mid-grey rather than zero.
    for (auto* h : {&head0_, &head_}) {
        for (auto& v : h->bias().node()->value) {
            v = Real(0.3);
        }
    }
}

void VideoTokenizer::check_clip(const VideoClip& clip) const {
    if (clip.frames != cfg_.frames || clip.height != cfg_.height || clip.width != cfg_.width ||
        clip.channels != cfg_.channels) {
        throw ShapeError("clip " + std::to_string(clip.frames) + "x" + std::to_string(clip.height) + "x" +
                         std::to_string(clip.width) + "x" + std::to_string(clip.channels) +
                         " does not match tokenizer config " + std::to_string(cfg_.frames) + "x" +
                         std::to_string(cfg_.height) + "x" + std::to_string(cfg_.width) + "x" +
                         std::to_string(cfg_.channels));
    }
}

void VideoTokenizer::check_codes(std::span<const std::uint32_t> codes) const {
    for (auto c : codes) {
        if (c >= cfg_.vocab()) {
            throw ConfigError("token code " + std::to_string(c) + " is outside [0, " + std::to_string(cfg_.vocab()) +
                              ")");
        }
    }
}

Tensor VideoTokenizer::positions(const Tensor& pos_t, const Tensor& pos_s, std::size_t batch) const {
    (void)batch;
    const std::size_t T = cfg_.grid_t(), S = cfg_.sites(), D = cfg_.dim;
    std::vector<std::size_t> it(T * S * D), is(T * S * D);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t s = 0; s < S; ++s) {
            for (std::size_t d = 0; d < D; ++d) {
                it[(t * S + s) * D + d] = t * D + d;
                is[(t * S + s) * D + d] = s * D + d;
            }
        }
    }
    return ops::add(ops::gather(pos_t, std::move(it), {T * S, D}), ops::gather(pos_s, std::move(is), {T * S, D}));
}

Tensor VideoTokenizer::embed_patches(std::span<const VideoClip> clips) const {
    const std::size_t B = clips.size(), S = cfg_.sites(), Tb = cfg_.grid_t() - 1, D = cfg_.dim;
    std::vector<Real> first, rest;
    first.reserve(B * S * cfg_.first_patch_dim());
    rest.reserve(B * Tb * S * cfg_.block_patch_dim());
    for (const auto& clip : clips) {
        check_clip(clip);
        auto ps = extract_patches(clip, cfg_);
        first.insert(first.end(), ps.first.begin(), ps.first.end());
        rest.insert(rest.end(), ps.rest.begin(), ps.rest.end());
    }
    // Centre intensities on zero. With [0, 1] inputs a flat dark patch and a
    // flat bright patch embed to parallel vectors, which layer norm maps to
    // the same point.
    for (auto* v : {&first, &rest}) {
        for (auto& x : *v) {
            x = 2 * x - 1;
        }
    }
    Tensor e0 = patch0_.forward(Tensor::from({B * S, cfg_.first_patch_dim()}, std::move(first)));
    Tensor er = patch_.forward(Tensor::from({B * Tb * S, cfg_.block_patch_dim()}, std::move(rest)));
    std::vector<Tensor> parts{e0, er};
    Tensor all = ops::concat_rows(parts);
    std::vector<std::size_t> rows;
    rows.reserve(B * (Tb + 1) * S);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t s = 0; s < S; ++s) {
            rows.push_back(b * S + s);
        }
        for (std::size_t t = 0; t < Tb; ++t) {
            for (std::size_t s = 0; s < S; ++s) {
                rows.push_back(B * S + (b * Tb + t) * S + s);
            }
        }
    }
    Tensor x = gather_rows(all, rows);
    Tensor pos = positions(enc_pos_t_, enc_pos_s_, B);
    return ops::reshape(ops::add(ops::reshape(x, {B, (Tb + 1) * S, D}), pos), {B * (Tb + 1) * S, D});
}

Tensor VideoTokenizer::patchify(const VideoClip& clip) const {
    return ops::reshape(embed_patches(std::span<const VideoClip>(&clip, 1)),
                        {cfg_.grid_t(), cfg_.sites(), cfg_.dim});
}

Tensor VideoTokenizer::encode_rows(std::span<const VideoClip> clips) const {
    const std::size_t B = clips.size(), T = cfg_.grid_t(), S = cfg_.sites();
    Tensor x = embed_patches(clips);
    for (const auto& blk : enc_spatial_) {
        x = blk.forward(x, B * T, S, false);
    }
    x = nn::swap_middle(x, B, T, S);
    for (const auto& blk : enc_temporal_) {
        x = blk.forward(x, B * S, T, true);
    }
    x = nn::swap_middle(x, B, S, T);
    return enc_norm_.forward(x);
}

Tensor VideoTokenizer::encode(const VideoClip& clip) const {
    Tensor z = encode_rows(std::span<const VideoClip>(&clip, 1));
    return ops::reshape(z, {cfg_.grid_t(), cfg_.grid_h(), cfg_.grid_w(), cfg_.dim});
}

Tensor VideoTokenizer::decode_quantized(const Tensor& quantized, std::size_t B) const {
    const std::size_t T = cfg_.grid_t(), S = cfg_.sites(), D = cfg_.dim, Tb = T - 1;
    Tensor h = cfg_.quantizer == QuantizerKind::Lfq ? quant_out_.forward(quantized) : quantized;
    Tensor pos = positions(dec_pos_t_, dec_pos_s_, B);
    h = ops::reshape(ops::add(ops::reshape(h, {B, T * S, D}), pos), {B * T * S, D});
    h = nn::swap_middle(h, B, T, S);
    for (const auto& blk : dec_temporal_) {
        h = blk.forward(h, B * S, T, true);
    }
    h = nn::swap_middle(h, B, S, T);
    for (const auto& blk : dec_spatial_) {
        h = blk.forward(h, B * T, S, false);
    }
    h = dec_norm_.forward(h);
    std::vector<std::size_t> rows0, rows1;
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t s = 0; s < S; ++s) {
                (t == 0 ? rows0 : rows1).push_back((b * T + t) * S + s);
            }
        }
    }
    Tensor out0 = head0_.forward(gather_rows(h, rows0));
    Tensor out1 = head_.forward(gather_rows(h, rows1));
    std::vector<Tensor> flat{ops::reshape(out0, {out0.numel()}), ops::reshape(out1, {B * Tb * S * cfg_.block_patch_dim()})};
    Tensor pixels = ops::concat_rows(flat);
    return ops::gather(pixels, pixel_index(cfg_, B), {B, cfg_.frames, cfg_.height, cfg_.width, cfg_.channels});
}

Tensor VideoTokenizer::decode_codes(std::span<const std::uint32_t> codes, std::size_t batch) const {
    if (codes.size() != batch * cfg_.token_count()) {
        throw ShapeError("decode: " + std::to_string(codes.size()) + " codes for " + std::to_string(batch) +
                         " grids of " + std::to_string(cfg_.token_count()));
    }
    check_codes(codes);
    Tensor q;
    if (cfg_.quantizer == QuantizerKind::Lfq) {
        std::vector<Real> v;
        v.reserve(codes.size() * cfg_.bits);
        for (auto c : codes) {
            auto bits = lfq_dequantize(c, cfg_.bits);
            v.insert(v.end(), bits.begin(), bits.end());
        }
        q = Tensor::from({codes.size(), cfg_.bits}, std::move(v));
    } else {
        q = ops::embedding(codebook_, codes);
    }
    return decode_quantized(q, batch);
}

TokenizerForward VideoTokenizer::forward(std::span<const VideoClip> clips) const {
    if (clips.empty()) {
        throw ShapeError("tokenizer forward on an empty batch");
    }
    TokenizerForward out;
    out.z = encode_rows(clips);
    const Real n = static_cast<Real>(out.z.dim(0));
    if (cfg_.quantizer == QuantizerKind::Lfq) {
        out.pre_quant = quant_in_.forward(out.z);
        auto q = lfq_quantize(out.pre_quant);
        out.codes = std::move(q.codes);
        // Commitment: lfq_beta * mean over sites and bits of (z - sg[q(z)])^2.
        Tensor target = q.quantized.detach();
        out.quant_loss = ops::scale(ops::sum(ops::square(ops::sub(out.pre_quant, target))),
                                    cfg_.lfq_beta / (n * static_cast<Real>(cfg_.bits)));
        out.recon = decode_quantized(q.quantized, clips.size());
    } else {
        out.pre_quant = out.z;
        auto q = vq_quantize(out.z, codebook_);
        out.codes = q.codes;
        out.quant_loss = vq_loss(out.z, ops::embedding(codebook_, q.codes), cfg_.beta);
        out.recon = decode_quantized(q.quantized, clips.size());
    }
    return out;
}

std::vector<TokenGrid> VideoTokenizer::tokenize(std::span<const VideoClip> clips) const {
    NoGradGuard guard;
    std::vector<TokenGrid> grids;
    constexpr std::size_t kChunk = 16;
    for (std::size_t i = 0; i < clips.size(); i += kChunk) {
        auto part = clips.subspan(i, std::min(kChunk, clips.size() - i));
        Tensor z = encode_rows(part);
        std::vector<std::uint32_t> codes;
        if (cfg_.quantizer == QuantizerKind::Lfq) {
            codes = lfq_quantize(quant_in_.forward(z)).codes;
        } else {
            codes = vq_quantize(z, codebook_).codes;
        }
        const std::size_t n = cfg_.token_count();
        for (std::size_t b = 0; b < part.size(); ++b) {
            TokenGrid g(cfg_.grid_t(), cfg_.grid_h(), cfg_.grid_w());
            std::copy(codes.begin() + static_cast<std::ptrdiff_t>(b * n),
                      codes.begin() + static_cast<std::ptrdiff_t>((b + 1) * n), g.codes.begin());
            grids.push_back(std::move(g));
        }
    }
    return grids;
}

TokenGrid VideoTokenizer::tokenize(const VideoClip& clip) const {
    return tokenize(std::span<const VideoClip>(&clip, 1)).front();
}

std::vector<VideoClip> VideoTokenizer::decode(std::span<const TokenGrid> grids) const {
    NoGradGuard guard;
    std::vector<VideoClip> out;
    constexpr std::size_t kChunk = 16;
    for (std::size_t i = 0; i < grids.size(); i += kChunk) {
        const std::size_t nb = std::min(kChunk, grids.size() - i);
        std::vector<std::uint32_t> codes;
        for (std::size_t b = 0; b < nb; ++b) {
            const auto& g = grids[i + b];
            if (g.t != cfg_.grid_t() || g.h != cfg_.grid_h() || g.w != cfg_.grid_w()) {
                throw ShapeError("token grid " + std::to_string(g.t) + "x" + std::to_string(g.h) + "x" +
                                 std::to_string(g.w) + " does not match tokenizer grid " +
                                 std::to_string(cfg_.grid_t()) + "x" + std::to_string(cfg_.grid_h()) + "x" +
                                 std::to_string(cfg_.grid_w()));
            }
            codes.insert(codes.end(), g.codes.begin(), g.codes.end());
        }
        Tensor px = decode_codes(codes, nb);
        auto data = px.data();
        const std::size_t per = cfg_.frames * cfg_.height * cfg_.width * cfg_.channels;
        for (std::size_t b = 0; b < nb; ++b) {
            VideoClip clip(cfg_.frames, cfg_.height, cfg_.width, cfg_.channels);
            for (std::size_t j = 0; j < per; ++j) {
                clip.pixels[j] = std::clamp(static_cast<float>(data[b * per + j]), 0.0f, 1.0f);
            }
            out.push_back(std::move(clip));
        }
    }
    return out;
}

VideoClip VideoTokenizer::decode(const TokenGrid& grid) const {
    return decode(std::span<const TokenGrid>(&grid, 1)).front();
}

std::vector<nn::Linear*> VideoTokenizer::linears() {
    std::vector<nn::Linear*> out{&patch0_, &patch_};
    for (auto& b : enc_spatial_) {
        b.collect_linears(out);
    }
    for (auto& b : enc_temporal_) {
        b.collect_linears(out);
    }
    if (cfg_.quantizer == QuantizerKind::Lfq) {
        out.push_back(&quant_in_);
        out.push_back(&quant_out_);
    }
    for (auto& b : dec_temporal_) {
        b.collect_linears(out);
    }
    for (auto& b : dec_spatial_) {
        b.collect_linears(out);
    }
    out.push_back(&head0_);
    out.push_back(&head_);
    return out;
}

std::vector<Tensor> VideoTokenizer::last_layer_params() const {
    return {head0_.weight(), head0_.bias(), head_.weight(), head_.bias()};
}

void VideoTokenizer::save(const fs::path& dir, const std::map<std::string, std::string>& extra_meta) const {
    for (auto* l : const_cast<VideoTokenizer*>(this)->linears()) {
        if (l->adapter()) {
            throw ConfigError("merge LoRA adapters before saving (layer '" + l->name() + "')");
        }
    }
    CheckpointWriter w(dir);
    w.set_meta("kind", "tokenizer");
    w.set_meta("seed", std::to_string(seed_));
    for (const auto& [k, v] : tokenizer_config_to_meta(cfg_)) {
        w.set_meta("config." + k, v);
    }
    for (const auto& [k, v] : extra_meta) {
        w.set_meta(k, v);
    }
    w.add_params(params_);
    w.finish();
}

VideoTokenizer VideoTokenizer::load(const fs::path& dir) {
    auto ck = Checkpoint::load(dir);
    if (!ck.has_meta("kind") || ck.meta("kind") != "tokenizer") {
        throw IoError("'" + dir.string() + "' is not a tokenizer checkpoint");
    }
    std::map<std::string, std::string> cfg_meta;
    for (const auto& [k, v] : ck.all_meta()) {
        if (k.rfind("config.", 0) == 0) {
            cfg_meta[k.substr(7)] = v;
        }
    }
    VideoTokenizer tok(tokenizer_config_from_meta(cfg_meta), std::stoull(ck.meta("seed")));
    ck.load_params(tok.params_);
    return tok;
}

}  // namespace cardiogen
