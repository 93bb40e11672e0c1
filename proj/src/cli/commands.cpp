#include "cardiogen/cli/commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cardiogen/eval/eval.hpp"
#include "cardiogen/numerics/io.hpp"

namespace cardiogen {

namespace {

using json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

void prepare_out(const RunConfig& cfg, const fs::path& out) {
    cfg.validate();
    if (out.empty()) {
        throw ConfigError("an output directory (--out) is required");
    }
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) {
        throw IoError("cannot create output directory '" + out.string() + "': " + ec.message());
    }
    write_resolved_config(cfg, out);
}

fs::path require_path(const RunConfig& cfg, const std::string& key, const char* what) {
    const auto& p = cfg.get_string(key);
    if (p.empty()) {
        throw ConfigError(std::string(what) + " is required; set " + key);
    }
    return p;
}

fs::path require_checkpoint(const RunConfig& cfg, const std::string& key, const char* what) {
    fs::path p = require_path(cfg, key, what);
    if (!fs::exists(p / "manifest.txt")) {
        throw MissingArtifactError(std::string(what) + " not found at '" + p.string() + "' (" + key + ")");
    }
    return p;
}

std::vector<CorpusSample> load_corpus(const fs::path& root, std::size_t limit) {
    auto rows = read_manifest(root);
    if (rows.empty()) {
        throw IoError("corpus '" + root.string() + "' has no clips");
    }
    if (limit > 0 && limit < rows.size()) {
        rows.resize(limit);
    }
    std::vector<CorpusSample> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
        out.push_back(load_sample(root, r));
    }
    const auto& c0 = out.front().clip;
    for (const auto& s : out) {
        if (s.clip.frames != c0.frames || s.clip.height != c0.height || s.clip.width != c0.width ||
            s.clip.channels != c0.channels) {
            throw ShapeError("corpus clip " + s.row.clip_id + " differs in shape from " + out.front().row.clip_id);
        }
    }
    return out;
}

VideoTokenizer load_tokenizer_for(const RunConfig& cfg) {
    return VideoTokenizer::load(require_checkpoint(cfg, "paths.tokenizer", "tokenizer checkpoint"));
}

void check_clip_fits(const VideoClip& clip, const TokenizerConfig& tc, const std::string& what) {
    if (clip.frames != tc.frames || clip.height != tc.height || clip.width != tc.width ||
        clip.channels != tc.channels) {
        throw ShapeError(what + " is " + std::to_string(clip.frames) + "x" + std::to_string(clip.height) + "x" +
                         std::to_string(clip.width) + "x" + std::to_string(clip.channels) +
                         ", the tokenizer expects " + std::to_string(tc.frames) + "x" + std::to_string(tc.height) +
                         "x" + std::to_string(tc.width) + "x" + std::to_string(tc.channels));
    }
}

std::vector<fs::path> split_paths(const std::string& s) {
    std::vector<fs::path> out;
    std::size_t b = 0;
    while (b <= s.size()) {
        auto e = s.find(';', b);
        if (e == std::string::npos) {
            e = s.size();
        }
        if (e > b) {
            out.emplace_back(s.substr(b, e - b));
        }
        b = e + 1;
    }
    return out;
}

// Corpus seed as recorded by datagen, or null when the corpus came from elsewhere.
json corpus_seed(const fs::path& root) {
    const auto p = root / "resolved_config.txt";
    if (!fs::exists(p)) {
        return nullptr;
    }
    return RunConfig::from_file(p).seed();
}

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

void write_resolved_config(const RunConfig& cfg, const fs::path& out) {
    std::string text = "# build " + std::string(build_id()) + "\n# config_hash " + cfg.hash_hex() + "\n";
    text += cfg.resolved();
    write_text_file(out / "resolved_config.txt", text);
}

VideoClip load_video(const fs::path& path) {
    if (!fs::exists(path)) {
        throw MissingArtifactError("clip not found: '" + path.string() + "'");
    }
    return fs::is_directory(path) ? load_clip_pgm(path) : load_clip(path);
}

void cmd_datagen(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
    prepare_out(cfg, out);
    const std::size_t n = cfg.get_size("data.n_clips");
    auto t0 = Clock::now();
    gen_dataset(out, n, cfg.dataset_ranges(), cfg.seed());
    log << "progress datagen clips=" << n << " seconds=" << fmt(seconds_since(t0)) << std::endl;
}

void cmd_train_tokenizer(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
    cfg.validate();
    const auto corpus_root = require_path(cfg, "paths.corpus", "training corpus");
    auto corpus = load_corpus(corpus_root, 0);
    prepare_out(cfg, out);
    std::vector<VideoClip> clips;
    for (auto& s : corpus) {
        clips.push_back(std::move(s.clip));
    }
    const auto& c0 = clips.front();
    const auto tcfg = cfg.tokenizer_config(c0.height, c0.width, c0.channels, c0.frames);
    tcfg.validate();
    const std::uint64_t seed = cfg.seed();
    VideoTokenizer tok(tcfg, mix_seed(seed, 1));
    Discriminator disc(cfg.discriminator_config(), c0.height, c0.width, c0.channels, mix_seed(seed, 2));
    RandomPatchExtractor phi(c0.height, c0.width, c0.channels, cfg.get_size("percep.patch"),
                             cfg.get_size("percep.width"), mix_seed(seed, 3));
    const auto tc = cfg.tokenizer_train_config();
    TokenizerTrainer trainer(tok, disc, phi, tc);
    Rng pick(mix_seed(seed, 5));
    const std::size_t every = cfg.get_size("tok_train.log_every");
    std::string csv = TokenizerTrainer::csv_header() + "\n";
    auto t0 = Clock::now();
    log << "progress train-tokenizer clips=" << clips.size() << " steps=" << tc.steps
        << " gan_from=" << trainer.warmup_steps() << std::endl;
    for (std::size_t s = 1; s <= tc.steps; ++s) {
        std::vector<VideoClip> batch;
        for (std::size_t b = 0; b < tc.batch; ++b) {
            batch.push_back(clips[pick.below(clips.size())]);
        }
        const auto lb = trainer.step(batch);
        csv += TokenizerTrainer::csv_row(s, lb) + "\n";
        if (s % every == 0 || s == tc.steps) {
            log << "progress train-tokenizer step=" << s << "/" << tc.steps << " recon=" << fmt(lb.recon)
                << " total=" << fmt(lb.total) << " disc=" << fmt(lb.disc_loss)
                << " seconds=" << fmt(seconds_since(t0)) << std::endl;
        }
    }
    write_text_file(out / "train_log.csv", csv);
    tok.save(out, {{"train.steps", std::to_string(tc.steps)}, {"train.seed", std::to_string(seed)},
                   {"build", build_id()}});

    // Round trip over the training corpus.
    const auto grids = tok.tokenize(std::span<const VideoClip>(clips));
    const auto recon = tok.decode(std::span<const TokenGrid>(grids));
    double se = 0, ae = 0;
    std::size_t n = 0;
    std::set<std::uint32_t> used;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        for (std::size_t k = 0; k < clips[i].pixels.size(); ++k) {
            const double d = static_cast<double>(recon[i].pixels[k]) - clips[i].pixels[k];
            se += d * d;
            ae += std::abs(d);
        }
        n += clips[i].pixels.size();
        used.insert(grids[i].codes.begin(), grids[i].codes.end());
    }
    json rt;
    rt["clips"] = clips.size();
    rt["mse"] = se / static_cast<double>(n);
    rt["mae"] = ae / static_cast<double>(n);
    rt["codes_used"] = used.size();
    rt["vocab"] = tcfg.vocab();
    rt["config_hash"] = cfg.hash_hex();
    write_text_file(out / "roundtrip.json", rt.dump(2) + "\n");
    log << "progress train-tokenizer done mse=" << fmt(rt["mse"]) << " mae=" << fmt(rt["mae"])
        << " codes=" << used.size() << " seconds=" << fmt(seconds_since(t0)) << std::endl;
}

void cmd_train_generator(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
    cfg.validate();
    // The tokenizer comes first and stays frozen.
    const auto tok = load_tokenizer_for(cfg);
    const auto corpus_root = require_path(cfg, "paths.corpus", "training corpus");
    auto corpus = load_corpus(corpus_root, 0);
    prepare_out(cfg, out);
    const auto& tcfg = tok.config();
    const std::size_t p = cfg.get_size("generator.ecg_patch");
    std::vector<VideoClip> clips;
    std::vector<GeneratorSample> samples;
    std::size_t cond_len = 0;
    for (auto& s : corpus) {
        check_clip_fits(s.clip, tcfg, "corpus clip " + s.row.clip_id);
        clips.push_back(std::move(s.clip));
        GeneratorSample g;
        g.ecg = patchify_ecg(normalize(s.ecg), p);
        cond_len = std::max(cond_len, g.ecg.leads * g.ecg.count);
        samples.push_back(std::move(g));
    }
    auto t0 = Clock::now();
    const auto grids = tok.tokenize(std::span<const VideoClip>(clips));
    for (std::size_t i = 0; i < grids.size(); ++i) {
        samples[i].tokens = grids[i].codes;
    }
    log << "progress train-generator tokenized=" << grids.size() << " seconds=" << fmt(seconds_since(t0))
        << std::endl;

    const std::uint64_t seed = cfg.seed();
    const auto gcfg = cfg.generator_config(tcfg, cond_len, corpus.front().ecg.leads);
    MvtmGenerator gen(gcfg, mix_seed(seed, 10));
    TokenCritic critic(gcfg, mix_seed(seed, 11));
    const auto tc = cfg.generator_train_config();
    GeneratorTrainer trainer(gen, critic, tc);
    Rng pick(mix_seed(seed, 12));
    const std::size_t every = cfg.get_size("gen_train.log_every");
    std::string csv = GeneratorTrainer::csv_header() + "\n";
    for (std::size_t s = 1; s <= tc.steps; ++s) {
        std::vector<GeneratorSample> batch;
        for (std::size_t b = 0; b < tc.batch; ++b) {
            batch.push_back(samples[pick.below(samples.size())]);
        }
        const auto rec = trainer.step(batch);
        csv += GeneratorTrainer::csv_row(rec) + "\n";
        if (s % every == 0 || s == tc.steps) {
            log << "progress train-generator step=" << s << "/" << tc.steps << " mvtm=" << fmt(rec.mvtm)
                << " per_token=" << fmt(rec.per_token) << " critic=" << fmt(rec.critic)
                << " seconds=" << fmt(seconds_since(t0)) << std::endl;
        }
    }
    write_text_file(out / "train_log.csv", csv);
    save_generator(out, gen, critic, &trainer.ema(), seed, tc.steps, {{"build", build_id()}});
    log << "progress train-generator done steps=" << tc.steps << std::endl;
}

void cmd_generate(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
    cfg.validate();
    const auto t_wall = Clock::now();
    const auto tok = load_tokenizer_for(cfg);
    const auto loaded = load_generator(require_checkpoint(cfg, "paths.generator", "generator checkpoint"),
                                       cfg.get_bool("generate.use_ema"));
    const auto ecg_paths = split_paths(cfg.get_string("generate.ecg"));
    if (ecg_paths.empty()) {
        throw ConfigError("generation needs an ECG; set generate.ecg");
    }
    std::vector<ECGSignal> ecgs;
    for (const auto& p : ecg_paths) {
        if (!fs::exists(p)) {
            throw MissingArtifactError("ECG not found: '" + p.string() + "'");
        }
        ecgs.push_back(load_ecg(p));
    }
    GenerationRequest req = cfg.generation_request();
    if (!cfg.get_string("generate.first_frame").empty()) {
        req.first_frame = load_video(cfg.get_string("generate.first_frame")).slice(0, 1);
    }
    if (!cfg.get_string("generate.prev_clip").empty()) {
        req.prev_clip = load_video(cfg.get_string("generate.prev_clip"));
    }
    req.validate();
    prepare_out(cfg, out);

    const auto result = generate_long(req, ecgs, tok, loaded.gen, &loaded.critic);
    save_clip(out / "clip.ept", result.video);
    save_clip_pgm(out / "frames", result.video);
    std::string prov;
    for (std::size_t i = 0; i < result.chunks.size(); ++i) {
        const auto& c = result.chunks[i];
        save_tokens(out / ("tokens_" + std::to_string(i) + ".ept"), c.tokens);
        json j;
        j["chunk"] = i;
        j["mode"] = mode_name(i == 0 ? req.mode : GenerationMode::Continuation);
        j["seed"] = cfg.seed();
        j["chunk_seed"] = i == 0 ? req.seed : mix_seed(req.seed, i);
        j["config_hash"] = cfg.hash_hex();
        j["steps"] = req.steps;
        j["forward_passes"] = c.forward_passes;
        j["lambda_cfg"] = req.lambda_cfg;
        j["ecg"] = ecg_paths[i].string();
        j["frames"] = c.clip.frames;
        j["pinned"] = c.pinned_tokens.size();
        j["generator_step"] = loaded.step;
        j["use_ema"] = cfg.get_bool("generate.use_ema");
        j["tokenize_seconds"] = c.tokenize_seconds;
        j["sample_seconds"] = c.sample_seconds;
        j["decode_seconds"] = c.decode_seconds;
        j["wall_seconds"] = i + 1 == result.chunks.size() ? seconds_since(t_wall) : 0.0;
        prov += j.dump() + "\n";
        log << "progress generate chunk=" << i << " forward_passes=" << c.forward_passes
            << " sample_seconds=" << fmt(c.sample_seconds) << " decode_seconds=" << fmt(c.decode_seconds)
            << std::endl;
    }
    write_text_file(out / "provenance.jsonl", prov);
    log << "progress generate done frames=" << result.video.frames << " wall_seconds=" << fmt(seconds_since(t_wall))
        << std::endl;
}

void cmd_evaluate(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
    cfg.validate();
    const bool generation = cfg.get_string("eval.mode") == "generation";
    const auto tok = load_tokenizer_for(cfg);
    std::optional<LoadedGenerator> loaded;
    if (generation) {
        loaded.emplace(load_generator(require_checkpoint(cfg, "paths.generator", "generator checkpoint"),
                                      cfg.get_bool("generate.use_ema")));
    }
    const auto corpus_root = require_path(cfg, "paths.corpus", "evaluation corpus");
    const auto corpus = load_corpus(corpus_root, cfg.get_size("eval.n_clips"));
    prepare_out(cfg, out);

    const double ef_tol = cfg.get_real("eval.ef_tolerance");
    const std::size_t phase_tol = cfg.get_size("eval.phase_tolerance");
    std::vector<EfPair> pairs, baseline;
    std::size_t locked = 0, hits = 0, failed = 0;
    double mse_sum = 0, mae_sum = 0, ssim_sum = 0;
    std::ostringstream csv;
    csv.precision(17);
    if (generation) {
        csv << "clip_id,ef_reference,ef_estimated,abs_error,ed_frame,es_frame,phase_locked,within_tolerance,"
               "segmented\n";
    } else {
        csv << "clip_id,mse,mae,ssim,ef_reference,ef_estimated,abs_error\n";
    }
    const GenerationRequest base = cfg.generation_request();
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& s = corpus[i];
        check_clip_fits(s.clip, tok.config(), "corpus clip " + s.row.clip_id);
        VideoClip clip;
        if (generation) {
            GenerationRequest req = base;
            req.mode = GenerationMode::EcgOnly;
            req.ecg = s.ecg;
            req.seed = mix_seed(base.seed, i);
            clip = generate(req, tok, loaded->gen, &loaded->critic).clip;
        } else {
            clip = tok.decode(tok.tokenize(s.clip));
        }
        EfEstimate est;
        bool segmented = true;
        try {
            est = estimate_ef(clip);
        } catch (const NumericError&) {
            // A clip with no foreground has no measurable EF; it counts as
            // EF 0 and not phase locked.
            segmented = false;
            ++failed;
        }
        const double err = std::abs(est.ef - s.row.ef_truth);
        pairs.push_back({s.row.clip_id, est.ef, s.row.ef_truth});
        if (generation) {
            const bool lock = segmented && within_frames(est.ed_frame, s.row.r_frames, phase_tol);
            locked += lock;
            hits += err <= ef_tol;
            csv << s.row.clip_id << "," << s.row.ef_truth << "," << est.ef << "," << err << "," << est.ed_frame << ","
                << est.es_frame << "," << lock << "," << (err <= ef_tol) << "," << segmented << "\n";
            log << "progress evaluate clip=" << s.row.clip_id << " ef=" << fmt(est.ef)
                << " reference=" << fmt(s.row.ef_truth) << " locked=" << lock << std::endl;
        } else {
            const double mse = clip_mse(s.clip, clip), mae = clip_mae(s.clip, clip), ss = ssim_clip(s.clip, clip);
            mse_sum += mse;
            mae_sum += mae;
            ssim_sum += ss;
            csv << s.row.clip_id << "," << mse << "," << mae << "," << ss << "," << s.row.ef_truth << "," << est.ef
                << "," << err << "\n";
        }
    }
    const double n = static_cast<double>(corpus.size());
    json sum;
    sum["mode"] = cfg.get_string("eval.mode");
    sum["clips"] = corpus.size();
    sum["unit"] = "fraction";
    if (pairs.size() >= 2) {
        const auto rep = ef_agreement(pairs);
        double mean_ref = 0;
        for (const auto& p : pairs) {
            mean_ref += p.reference;
        }
        mean_ref /= n;
        for (const auto& p : pairs) {
            baseline.push_back({p.id, mean_ref, p.reference});
        }
        const auto base_rep = ef_agreement(baseline);
        sum["ef_mae"] = rep.mae;
        sum["ef_rmse"] = rep.rmse;
        sum["ef_r2"] = rep.r2_defined ? json(rep.r2) : json(nullptr);
        sum["baseline_ef"] = mean_ref;
        sum["baseline_mae"] = base_rep.mae;
        sum["beats_baseline"] = rep.mae < base_rep.mae;
    }
    sum["segmentation_failures"] = failed;
    if (generation) {
        sum["phase_lock_rate"] = static_cast<double>(locked) / n;
        sum["ef_tolerance"] = ef_tol;
        sum["within_tolerance_rate"] = static_cast<double>(hits) / n;
    } else {
        sum["mse"] = mse_sum / n;
        sum["mae"] = mae_sum / n;
        sum["ssim"] = ssim_sum / n;
    }
    sum["config_hash"] = cfg.hash_hex();
    sum["corpus_seed"] = corpus_seed(corpus_root);
    sum["build"] = build_id();
    write_text_file(out / "report.csv", csv.str());
    write_text_file(out / "summary.json", sum.dump(2) + "\n");
    log << "progress evaluate done " << sum.dump() << std::endl;
}

void cmd_inspect_tokens(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
    cfg.validate();
    const auto tok = load_tokenizer_for(cfg);
    const auto clip = load_video(require_path(cfg, "inspect.clip", "clip to inspect"));
    check_clip_fits(clip, tok.config(), "clip");
    prepare_out(cfg, out);
    const auto grid = tok.tokenize(clip);
    save_tokens(out / "tokens.ept", grid);
    std::ostringstream text;
    std::set<std::uint32_t> used(grid.codes.begin(), grid.codes.end());
    text << "# grid " << grid.t << "x" << grid.h << "x" << grid.w << " vocab " << tok.config().vocab() << "\n";
    for (std::size_t t = 0; t < grid.t; ++t) {
        const auto& tc = tok.config();
        text << "t=" << t << " frames=[" << tc.frame_begin(t) << "," << tc.frame_end(t) << ")\n";
        for (std::size_t y = 0; y < grid.h; ++y) {
            for (std::size_t x = 0; x < grid.w; ++x) {
                text << (x ? " " : "") << grid.codes[(t * grid.h + y) * grid.w + x];
            }
            text << "\n";
        }
    }
    write_text_file(out / "tokens.txt", text.str());
    log << "progress inspect-tokens tokens=" << grid.size() << " distinct=" << used.size()
        << " hash=" << hex(fnv1a64(std::string_view(reinterpret_cast<const char*>(grid.codes.data()),
                                                     grid.codes.size() * sizeof(std::uint32_t))))
        << std::endl;
}

}  // namespace cardiogen
