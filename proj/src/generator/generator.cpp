#include "cardiogen/generator/generator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace cardiogen {

namespace {

std::size_t meta_size(const std::map<std::string, std::string>& meta, const std::string& key) {
    auto it = meta.find(key);
    if (it == meta.end()) {
        throw IoError("generator checkpoint lacks '" + key + "'");
    }
    return static_cast<std::size_t>(std::stoull(it->second));
}

double meta_double(const std::map<std::string, std::string>& meta, const std::string& key) {
    auto it = meta.find(key);
    if (it == meta.end()) {
        throw IoError("generator checkpoint lacks '" + key + "'");
    }
    return std::stod(it->second);
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

Tensor row_vector(const Tensor& table, std::size_t row) {
    return ops::reshape(ops::slice_rows(table, row, row + 1), {table.dim(1)});
}

}  // namespace

void GeneratorConfig::validate() const {
    if (vocab < 2 || vocab > 65535) {
        throw ConfigError("generator vocab must be in [2, 65535], got " + std::to_string(vocab));
    }
    if (grid_t == 0 || grid_h == 0 || grid_w == 0) {
        throw ConfigError("generator token grid extents must be positive");
    }
    if (dim == 0 || depth == 0 || heads == 0 || head_dim == 0 || ff_mult == 0) {
        throw ConfigError("generator transformer extents must be positive");
    }
    if (cond_len == 0 || ecg_patch == 0 || ecg_leads == 0) {
        throw ConfigError("generator conditioning extents must be positive");
    }
    if (critic_dim == 0 || critic_depth == 0 || critic_heads == 0 || critic_dim % critic_heads != 0) {
        throw ConfigError("critic width must be a positive multiple of its head count");
    }
    if (p_drop < 0 || p_drop > 1 || patch_mask_rate < 0 || patch_mask_rate > 1) {
        throw ConfigError("p_drop and patch_mask_rate must be in [0, 1]");
    }
}

std::map<std::string, std::string> generator_config_to_meta(const GeneratorConfig& c) {
    return {{"vocab", std::to_string(c.vocab)},
            {"grid_t", std::to_string(c.grid_t)},
            {"grid_h", std::to_string(c.grid_h)},
            {"grid_w", std::to_string(c.grid_w)},
            {"dim", std::to_string(c.dim)},
            {"depth", std::to_string(c.depth)},
            {"heads", std::to_string(c.heads)},
            {"head_dim", std::to_string(c.head_dim)},
            {"ff_mult", std::to_string(c.ff_mult)},
            {"cond_len", std::to_string(c.cond_len)},
            {"ecg_patch", std::to_string(c.ecg_patch)},
            {"ecg_leads", std::to_string(c.ecg_leads)},
            {"ecg_trainable", c.ecg_trainable ? "1" : "0"},
            {"critic_dim", std::to_string(c.critic_dim)},
            {"critic_depth", std::to_string(c.critic_depth)},
            {"critic_heads", std::to_string(c.critic_heads)},
            {"p_drop", fmt17(c.p_drop)},
            {"patch_mask_rate", fmt17(c.patch_mask_rate)}};
}

GeneratorConfig generator_config_from_meta(const std::map<std::string, std::string>& m) {
    GeneratorConfig c;
    c.vocab = meta_size(m, "vocab");
    c.grid_t = meta_size(m, "grid_t");
    c.grid_h = meta_size(m, "grid_h");
    c.grid_w = meta_size(m, "grid_w");
    c.dim = meta_size(m, "dim");
    c.depth = meta_size(m, "depth");
    c.heads = meta_size(m, "heads");
    c.head_dim = meta_size(m, "head_dim");
    c.ff_mult = meta_size(m, "ff_mult");
    c.cond_len = meta_size(m, "cond_len");
    c.ecg_patch = meta_size(m, "ecg_patch");
    c.ecg_leads = meta_size(m, "ecg_leads");
    c.ecg_trainable = meta_size(m, "ecg_trainable") != 0;
    c.critic_dim = meta_size(m, "critic_dim");
    c.critic_depth = meta_size(m, "critic_depth");
    c.critic_heads = meta_size(m, "critic_heads");
    c.p_drop = meta_double(m, "p_drop");
    c.patch_mask_rate = meta_double(m, "patch_mask_rate");
    c.validate();
    return c;
}

double mask_schedule(double t, double total_steps) {
    if (!(total_steps > 0) || !(t >= 0) || t > total_steps) {
        throw ConfigError("mask_schedule needs 0 <= t <= T_steps and T_steps > 0, got t=" + std::to_string(t) +
                          " T_steps=" + std::to_string(total_steps));
    }
    return std::cos(M_PI * t / (2.0 * total_steps));
}

std::size_t masked_count(double ratio, std::size_t n) {
    if (!(ratio >= 0) || ratio > 1) {
        throw ConfigError("mask ratio must be in [0, 1], got " + std::to_string(ratio));
    }
    // The epsilon keeps ratios such as 0.5 * 8 from rounding up to 5 when
    // they come out of a cosine a few ulps high.
    const double m = std::ceil(ratio * static_cast<double>(n) - 1e-9);
    return std::min(n, static_cast<std::size_t>(std::max(0.0, m)));
}

MaskedTokens mask_tokens(std::span<const std::uint32_t> tokens, double ratio, std::uint32_t mask_id, Rng& rng) {
    MaskedTokens out;
    out.tokens.assign(tokens.begin(), tokens.end());
    out.mask.assign(tokens.size(), 0);
    out.masked = masked_count(ratio, tokens.size());
    for (auto i : rng.sample_without_replacement(tokens.size(), out.masked)) {
        out.tokens[i] = mask_id;
        out.mask[i] = 1;
    }
    return out;
}

MvtmGenerator::MvtmGenerator(const GeneratorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    Rng rng(mix_seed(seed, 0x67656e));
    const std::size_t D = cfg.dim;
    tok_emb_ = params_.add_normal("tok_emb", {cfg.vocab + 1, D}, rng, 0.02);
    pos_emb_ = params_.add_normal("pos_emb", {cfg.seq_len(), D}, rng, 0.02);
    modality_ = params_.add_normal("modality", {2, D}, rng, 0.02);
    null_cond_ = params_.add_normal("null_cond", {cfg.cond_len, D}, rng, 0.02);
    ecg_mask_ = params_.add_normal("ecg_mask", {1, D}, rng, 0.02);
    const std::size_t before = params_.size();
    ecg_ = EcgEmbedder(params_, "ecg", cfg.ecg_patch, D, cfg.cond_len, cfg.ecg_leads, rng);
    if (!cfg.ecg_trainable) {
        for (std::size_t i = before; i < params_.size(); ++i) {
            params_.entries()[i].tensor.set_requires_grad(false);
        }
    }
    nn::BlockConfig bc{D, cfg.heads, cfg.head_dim, cfg.ff_mult, cfg.depth};
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        blocks_.emplace_back(params_, "block" + std::to_string(i), bc, rng);
    }
    norm_ = nn::LayerNorm(params_, "norm", D);
    // Small head so untrained logits are close to uniform.
    head_ = nn::Linear(params_, "head", D, cfg.vocab, rng, 0.02);
}

Condition MvtmGenerator::null_condition() const {
    Condition c;
    c.rows = null_cond_;
    c.valid.assign(cfg_.cond_len, 1);
    c.is_null = true;
    return c;
}

Condition MvtmGenerator::encode_condition(const EcgPatches& patches) const {
    const std::size_t n = patches.leads * patches.count;
    if (n == 0 || n > cfg_.cond_len) {
        throw ShapeError("ECG condition has " + std::to_string(n) + " patches; the generator accepts 1.." +
                         std::to_string(cfg_.cond_len));
    }
    Condition c;
    c.rows = ecg_.embed(patches);
    c.valid = patches.valid;
    if (n < cfg_.cond_len) {
        std::vector<Tensor> parts{c.rows, Tensor::zeros({cfg_.cond_len - n, cfg_.dim})};
        c.rows = ops::concat_rows(parts);
        c.valid.resize(cfg_.cond_len, 0);
    }
    return c;
}

Condition MvtmGenerator::encode_ecg(const ECGSignal& ecg) const {
    if (ecg.leads != cfg_.ecg_leads) {
        throw ShapeError("generator expects " + std::to_string(cfg_.ecg_leads) + "-lead ECG, got " +
                         std::to_string(ecg.leads));
    }
    return encode_condition(patchify_ecg(normalize(ecg), cfg_.ecg_patch));
}

Tensor MvtmGenerator::forward_logits(std::span<const std::vector<std::uint32_t>> tokens,
                                     std::span<const Condition> conds) const {
    const std::size_t B = tokens.size(), S = cfg_.seq_len(), C = cfg_.cond_len, L = C + S, D = cfg_.dim;
    if (B == 0 || conds.size() != B) {
        throw ShapeError("forward_logits needs one condition per sequence, got " + std::to_string(conds.size()) +
                         " for " + std::to_string(B));
    }
    std::vector<std::uint32_t> ids;
    ids.reserve(B * S);
    for (const auto& t : tokens) {
        if (t.size() != S) {
            throw ShapeError("token sequence of length " + std::to_string(t.size()) + ", generator seq_len is " +
                             std::to_string(S));
        }
        for (auto id : t) {
            if (id > cfg_.mask_token_id()) {
                throw ShapeError("token id " + std::to_string(id) + " exceeds the mask id " +
                                 std::to_string(cfg_.mask_token_id()));
            }
            ids.push_back(id);
        }
    }
    std::vector<Tensor> cond_rows;
    std::vector<std::uint8_t> key_valid(B * L, 1);
    for (std::size_t b = 0; b < B; ++b) {
        const auto& c = conds[b];
        if (c.rows.rank() != 2 || c.rows.dim(0) != C || c.rows.dim(1) != D || c.valid.size() != C) {
            throw ShapeError("condition prefix must be [" + std::to_string(C) + ", " + std::to_string(D) + "]");
        }
        cond_rows.push_back(c.rows);
        std::copy(c.valid.begin(), c.valid.end(), key_valid.begin() + static_cast<std::ptrdiff_t>(b * L));
    }
    Tensor cond = ops::add(ops::concat_rows(cond_rows), row_vector(modality_, 0));
    Tensor video = ops::add(ops::reshape(ops::embedding(tok_emb_, ids), {B, S, D}), pos_emb_);
    video = ops::add(ops::reshape(video, {B * S, D}), row_vector(modality_, 1));

    std::vector<Tensor> both{cond, video};
    Tensor all = ops::concat_rows(both);
    std::vector<std::uint32_t> order, video_rows;
    order.reserve(B * L);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t i = 0; i < C; ++i) {
            order.push_back(static_cast<std::uint32_t>(b * C + i));
        }
        for (std::size_t i = 0; i < S; ++i) {
            order.push_back(static_cast<std::uint32_t>(B * C + b * S + i));
            video_rows.push_back(static_cast<std::uint32_t>(b * L + C + i));
        }
    }
    Tensor x = ops::embedding(all, order);
    for (const auto& blk : blocks_) {
        x = blk.forward(x, B, L, false, key_valid);
    }
    return head_.forward(norm_.forward(ops::embedding(x, video_rows)));
}

void MvtmGenerator::zero_positions() {
    auto d = pos_emb_.mutable_data();
    std::fill(d.begin(), d.end(), Real(0));
}

Condition condition_dropout(const Condition& cond, const MvtmGenerator& gen, double p_drop, double patch_mask_rate,
                            Rng& rng) {
    if (p_drop < 0 || p_drop > 1 || patch_mask_rate < 0 || patch_mask_rate > 1) {
        throw ConfigError("p_drop and patch_mask_rate must be in [0, 1]");
    }
    if (cond.is_null) {
        return cond;
    }
    if (rng.uniform() < p_drop) {
        return gen.null_condition();
    }
    const std::size_t C = cond.valid.size();
    std::vector<std::uint32_t> pick(C);
    bool any = false;
    for (std::size_t i = 0; i < C; ++i) {
        pick[i] = static_cast<std::uint32_t>(i);
        if (cond.valid[i] && patch_mask_rate > 0 && rng.uniform() < patch_mask_rate) {
            pick[i] = static_cast<std::uint32_t>(C);
            any = true;
        }
    }
    if (!any) {
        return cond;
    }
    std::vector<Tensor> parts{cond.rows, gen.ecg_mask_embedding()};
    Condition out = cond;
    out.rows = ops::embedding(ops::concat_rows(parts), pick);
    return out;
}

Tensor mvtm_loss(const Tensor& logits, std::span<const std::uint32_t> targets, std::span<const std::uint8_t> mask,
                 std::size_t batch) {
    if (batch == 0) {
        throw ConfigError("mvtm_loss needs a positive batch size");
    }
    return ops::masked_nll(logits, targets, mask, static_cast<Real>(batch));
}

TokenCritic::TokenCritic(const GeneratorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    Rng rng(mix_seed(seed, 0x637274));
    const std::size_t D = cfg.critic_dim;
    tok_emb_ = params_.add_normal("tok_emb", {cfg.vocab + 1, D}, rng, 0.02);
    pos_emb_ = params_.add_normal("pos_emb", {cfg.seq_len(), D}, rng, 0.02);
    nn::BlockConfig bc{D, cfg.critic_heads, D / cfg.critic_heads, 4, cfg.critic_depth};
    for (std::size_t i = 0; i < cfg.critic_depth; ++i) {
        blocks_.emplace_back(params_, "block" + std::to_string(i), bc, rng);
    }
    norm_ = nn::LayerNorm(params_, "norm", D);
    out_ = nn::Linear(params_, "out", D, 1, rng, 0.02);
}

Tensor TokenCritic::forward(std::span<const std::vector<std::uint32_t>> tokens) const {
    const std::size_t B = tokens.size(), S = cfg_.seq_len(), D = cfg_.critic_dim;
    std::vector<std::uint32_t> ids;
    for (const auto& t : tokens) {
        if (t.size() != S) {
            throw ShapeError("critic input of length " + std::to_string(t.size()) + ", expected " +
                             std::to_string(S));
        }
        for (auto id : t) {
            if (id > cfg_.mask_token_id()) {
                throw ShapeError("critic token id " + std::to_string(id) + " out of range");
            }
            ids.push_back(id);
        }
    }
    Tensor x = ops::add(ops::reshape(ops::embedding(tok_emb_, ids), {B, S, D}), pos_emb_);
    x = ops::reshape(x, {B * S, D});
    for (const auto& blk : blocks_) {
        x = blk.forward(x, B, S, false);
    }
    return ops::reshape(ops::sigmoid(out_.forward(norm_.forward(x))), {B * S});
}

Tensor critic_loss(const Tensor& real_scores, const Tensor& fake_scores) {
    const std::size_t nr = real_scores.numel(), nf = fake_scores.numel();
    if (nr + nf == 0) {
        throw ShapeError("critic_loss on empty scores");
    }
    std::vector<Tensor> parts;
    if (nr) {
        parts.push_back(ops::reshape(real_scores, {nr, 1}));
    }
    if (nf) {
        parts.push_back(ops::reshape(fake_scores, {nf, 1}));
    }
    std::vector<Real> labels(nr + nf, Real(0));
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(nr), Real(1));
    return ops::binary_cross_entropy(ops::reshape(ops::concat_rows(parts), {nr + nf}), labels);
}

GeneratorTrainer::GeneratorTrainer(MvtmGenerator& gen, TokenCritic& critic, const GeneratorTrainConfig& cfg)
    : gen_(gen), critic_(critic), cfg_(cfg), rng_(mix_seed(cfg.seed, 0x6d76746d)) {
    if (cfg.steps == 0 || cfg.batch == 0) {
        throw ConfigError("generator training needs positive steps and batch");
    }
    for (AdamState* s : {&opt_, &critic_opt_}) {
        s->beta1 = cfg.beta1;
        s->beta2 = cfg.beta2;
        s->clip_norm = cfg.clip_norm;
    }
    opt_.lr = cfg.lr;
    critic_opt_.lr = cfg.critic_lr;
    ema_ = ema_init(gen.params().entries(), cfg.ema_decay, cfg.ema_every);
}

GeneratorStepRecord GeneratorTrainer::step(std::span<const GeneratorSample> batch) {
    ++step_;
    const auto& gc = gen_.config();
    const std::size_t B = batch.size(), S = gc.seq_len();
    if (B == 0) {
        throw ShapeError("generator step on an empty batch");
    }
    GeneratorStepRecord rec;
    rec.step = step_;
    double scale = 1.0;
    if (step_ <= cfg_.warmup_steps) {
        scale = static_cast<double>(step_) / static_cast<double>(cfg_.warmup_steps + 1);
    } else {
        const double span = static_cast<double>(std::max<std::size_t>(1, cfg_.steps - cfg_.warmup_steps));
        const double p = std::min(1.0, static_cast<double>(step_ - cfg_.warmup_steps) / span);
        scale = cfg_.lr_min_frac + (1.0 - cfg_.lr_min_frac) * 0.5 * (1.0 + std::cos(M_PI * p));
    }
    opt_.lr = static_cast<Real>(cfg_.lr * scale);
    rec.lr = opt_.lr;

    std::vector<std::vector<std::uint32_t>> inputs(B), targets(B);
    std::vector<std::uint32_t> flat_targets;
    std::vector<std::uint8_t> flat_mask;
    std::vector<Condition> conds;
    for (std::size_t b = 0; b < B; ++b) {
        const auto& s = batch[b];
        if (s.tokens.size() != S) {
            throw ShapeError("training sample " + std::to_string(b) + " has " + std::to_string(s.tokens.size()) +
                             " tokens, expected " + std::to_string(S));
        }
        const double ratio = mask_schedule(rng_.uniform(), 1.0);
        auto mt = mask_tokens(s.tokens, ratio, gc.mask_token_id(), rng_);
        rec.mask_ratio += ratio / static_cast<double>(B);
        rec.masked += mt.masked;
        inputs[b] = std::move(mt.tokens);
        targets[b] = s.tokens;
        flat_targets.insert(flat_targets.end(), s.tokens.begin(), s.tokens.end());
        flat_mask.insert(flat_mask.end(), mt.mask.begin(), mt.mask.end());
        conds.push_back(condition_dropout(gen_.encode_condition(s.ecg), gen_, gc.p_drop, gc.patch_mask_rate, rng_));
    }
    Tensor logits = gen_.forward_logits(inputs, conds);
    Tensor loss = mvtm_loss(logits, flat_targets, flat_mask, B);
    rec.mvtm = loss.item();
    if (!std::isfinite(rec.mvtm)) {
        throw NumericError("generator step " + std::to_string(step_) + ": non-finite MVTM loss");
    }
    rec.per_token = rec.masked ? rec.mvtm * static_cast<double>(B) / static_cast<double>(rec.masked) : 0.0;
    gen_.params().zero_grad();
    loss.backward();
    adam_step(gen_.params().entries(), opt_);
    ema_maybe_update(ema_, gen_.params().entries(), step_);

    if (cfg_.train_critic && rec.masked > 0) {
        // Fill masked sites with tokens sampled from the (pre-update) logits.
        std::vector<std::vector<std::uint32_t>> fake = targets;
        std::vector<std::size_t> real_idx, fake_idx;
        const auto lv = logits.data();
        const std::size_t V = gc.vocab;
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t i = 0; i < S; ++i) {
                const std::size_t row = b * S + i;
                if (!flat_mask[row]) {
                    real_idx.push_back(row);
                    continue;
                }
                fake_idx.push_back(row);
                double best = -INFINITY;
                std::uint32_t arg = 0;
                for (std::size_t v = 0; v < V; ++v) {
                    const double g = static_cast<double>(lv[row * V + v]) + rng_.gumbel();
                    if (g > best) {
                        best = g;
                        arg = static_cast<std::uint32_t>(v);
                    }
                }
                fake[b][i] = arg;
            }
        }
        Tensor probs = critic_.forward(fake);
        Tensor closs;
        if (real_idx.empty()) {
            // Fully masked batch: every scored token is fake.
            closs = ops::binary_cross_entropy(probs, std::vector<Real>(B * S, Real(0)));
        } else {
            Tensor real = ops::gather(probs, real_idx, {real_idx.size()});
            Tensor fk = ops::gather(probs, fake_idx, {fake_idx.size()});
            closs = critic_loss(real, fk);
        }
        rec.critic = closs.item();
        if (!std::isfinite(rec.critic)) {
            throw NumericError("generator step " + std::to_string(step_) + ": non-finite critic loss");
        }
        critic_.params().zero_grad();
        closs.backward();
        adam_step(critic_.params().entries(), critic_opt_);
    }
    return rec;
}

std::string GeneratorTrainer::csv_header() { return "step,mask_ratio,masked,mvtm,per_token,critic,lr"; }

std::string GeneratorTrainer::csv_row(const GeneratorStepRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%zu,%.9g,%.9g,%.9g,%.9g", r.step, r.mask_ratio, r.masked, r.mvtm,
                  r.per_token, r.critic, r.lr);
    return buf;
}

void save_generator(const fs::path& dir, const MvtmGenerator& gen, const TokenCritic& critic, const EmaState* ema,
                    std::uint64_t seed, std::size_t step, const std::map<std::string, std::string>& extra_meta) {
    CheckpointWriter w(dir);
    w.set_meta("kind", "generator");
    w.set_meta("seed", std::to_string(seed));
    w.set_meta("step", std::to_string(step));
    for (const auto& [k, v] : generator_config_to_meta(gen.config())) {
        w.set_meta("config." + k, v);
    }
    w.set_meta("ema", ema ? "1" : "0");
    if (ema) {
        w.set_meta("ema.decay", fmt17(ema->decay));
        w.set_meta("ema.every", std::to_string(ema->update_every));
    }
    for (const auto& [k, v] : extra_meta) {
        w.set_meta(k, v);
    }
    w.add_params(gen.params(), "gen.");
    w.add_params(critic.params(), "critic.");
    if (ema) {
        const auto& entries = gen.params().entries();
        if (ema->shadow.size() != entries.size()) {
            throw ShapeError("EMA state does not match the generator parameters");
        }
        for (std::size_t i = 0; i < entries.size(); ++i) {
            w.add_tensor("ema." + entries[i].name, entries[i].tensor.shape(), ema->shadow[i]);
        }
    }
    w.finish();
}

LoadedGenerator load_generator(const fs::path& dir, bool use_ema) {
    auto ck = Checkpoint::load(dir);
    if (!ck.has_meta("kind") || ck.meta("kind") != "generator") {
        throw IoError("'" + dir.string() + "' is not a generator checkpoint");
    }
    std::map<std::string, std::string> cfg_meta;
    for (const auto& [k, v] : ck.all_meta()) {
        if (k.rfind("config.", 0) == 0) {
            cfg_meta[k.substr(7)] = v;
        }
    }
    const auto cfg = generator_config_from_meta(cfg_meta);
    const auto seed = std::stoull(ck.meta("seed"));
    LoadedGenerator out{MvtmGenerator(cfg, seed), TokenCritic(cfg, seed), std::stoull(ck.meta("step")), seed,
                        ck.has_meta("ema") && ck.meta("ema") == "1", ck.all_meta()};
    ck.load_params(out.gen.params(), "gen.");
    ck.load_params(out.critic.params(), "critic.");
    if (use_ema) {
        if (!out.has_ema) {
            throw MissingArtifactError("generator checkpoint '" + dir.string() + "' has no EMA shadows");
        }
        for (auto& p : out.gen.params().entries()) {
            auto values = ck.tensor("ema." + p.name).as_real();
            auto d = p.tensor.mutable_data();
            if (values.size() != d.size()) {
                throw ShapeError("EMA shadow for '" + p.name + "' has the wrong size");
            }
            std::copy(values.begin(), values.end(), d.begin());
        }
    }
    return out;
}

}  // namespace cardiogen
