#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "cardiogen/cli/commands.hpp"
#include "cardiogen/eval/eval.hpp"
#include "cardiogen/synth/synth.hpp"
#include "cardiogen/tokenizer/tokenizer.hpp"

namespace py = pybind11;
using namespace cardiogen;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

// [T, H, W] or [T, H, W, C] float array to a clip.
VideoClip to_clip(const FloatArray& a) {
    if (a.ndim() != 3 && a.ndim() != 4) {
        throw ShapeError("clip arrays are [T, H, W] or [T, H, W, C], got " + std::to_string(a.ndim()) + " dims");
    }
    VideoClip c(a.shape(0), a.shape(1), a.shape(2), a.ndim() == 4 ? a.shape(3) : 1);
    std::copy(a.data(), a.data() + a.size(), c.pixels.begin());
    return c;
}

py::array_t<float> from_clip(const VideoClip& c) {
    py::array_t<float> out({c.frames, c.height, c.width, c.channels});
    std::copy(c.pixels.begin(), c.pixels.end(), out.mutable_data());
    return out;
}

py::array_t<float> from_ecg(const ECGSignal& s) {
    py::array_t<float> out({s.leads, s.length});
    std::copy(s.samples.begin(), s.samples.end(), out.mutable_data());
    return out;
}

DatasetRanges ranges_from(const py::dict& kw) {
    RunConfig cfg;
    for (const auto& [k, v] : kw) {
        cfg.set("data." + py::str(k).cast<std::string>(), py::str(v).cast<std::string>(), "python");
    }
    return cfg.dataset_ranges();
}

py::dict sample_dict(const CorpusSample& s) {
    py::dict d;
    d["clip_id"] = s.row.clip_id;
    d["clip"] = from_clip(s.clip);
    d["ecg"] = from_ecg(s.ecg);
    d["ef_truth"] = s.row.ef_truth;
    d["r_ed"] = s.row.r_ed;
    d["r_es"] = s.row.r_es;
    d["bpm"] = s.row.bpm;
    d["r_frames"] = s.row.r_frames;
    d["t_frames"] = s.row.t_frames;
    return d;
}

}  // namespace

PYBIND11_MODULE(_cardiogen, m) {
    m.doc() = "ECG-conditioned echocardiogram video generation";
    m.attr("build_id") = build_id();

    static py::exception<Error> base(m, "Error");
    static py::exception<ConfigError> config_error(m, "ConfigError", base.ptr());
    static py::exception<ShapeError> shape_error(m, "ShapeError", base.ptr());
    static py::exception<NumericError> numeric_error(m, "NumericError", base.ptr());
    static py::exception<IoError> io_error(m, "IoError", base.ptr());
    static py::exception<MissingArtifactError> missing(m, "MissingArtifactError", io_error.ptr());
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) {
                std::rethrow_exception(p);
            }
        } catch (const MissingArtifactError& e) {
            missing(e.what());
        } catch (const ConfigError& e) {
            config_error(e.what());
        } catch (const ShapeError& e) {
            shape_error(e.what());
        } catch (const NumericError& e) {
            numeric_error(e.what());
        } catch (const IoError& e) {
            io_error(e.what());
        } catch (const Error& e) {
            base(e.what());
        }
    });

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::vector<const char*> argv{"cardiogen"};
            for (const auto& a : args) {
                argv.push_back(a.c_str());
            }
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs one command line; returns (exit_code, stdout, stderr).");

    m.def(
        "resolved_config",
        [](const std::map<std::string, std::string>& overrides) {
            RunConfig cfg;
            for (const auto& [k, v] : overrides) {
                cfg.set(k, v, "python");
            }
            cfg.validate();
            return py::make_tuple(cfg.resolved(), cfg.hash_hex());
        },
        py::arg("overrides") = std::map<std::string, std::string>{});

    m.def(
        "gen_ecg",
        [](double bpm, double duration_s, int sample_rate_hz, double noise_std, std::uint64_t seed) {
            SyntheticECGParams p;
            p.bpm = bpm;
            p.duration_s = duration_s;
            p.sample_rate_hz = sample_rate_hz;
            p.noise_std = noise_std;
            const auto e = gen_ecg(p, seed);
            return py::make_tuple(from_ecg(e.signal), e.r_peaks, e.t_peaks);
        },
        py::arg("bpm") = 75.0, py::arg("duration_s") = 3.0, py::arg("sample_rate_hz") = 100,
        py::arg("noise_std") = 0.01, py::arg("seed") = 0, "Returns (signal [leads, T], r_peaks, t_peaks).");

    m.def(
        "make_sample",
        [](std::uint64_t seed, std::size_t index, const py::kwargs& kw) {
            return sample_dict(make_sample(ranges_from(kw), seed, index));
        },
        py::arg("seed"), py::arg("index"), "One corpus sample; keyword arguments override data.* keys.");

    m.def("ef_from_radii", &ef_from_radii, py::arg("r_ed"), py::arg("r_es"));

    m.def(
        "mse", [](const FloatArray& a, const FloatArray& b) { return clip_mse(to_clip(a), to_clip(b)); },
        py::arg("a"), py::arg("b"));
    m.def(
        "mae", [](const FloatArray& a, const FloatArray& b) { return clip_mae(to_clip(a), to_clip(b)); },
        py::arg("a"), py::arg("b"));
    m.def(
        "ssim",
        [](const FloatArray& a, const FloatArray& b, std::size_t window) {
            SsimOptions o;
            o.window = window;
            return ssim_clip(to_clip(a), to_clip(b), o);
        },
        py::arg("a"), py::arg("b"), py::arg("window") = 7);
    m.def(
        "estimate_ef",
        [](const FloatArray& clip) {
            const auto e = estimate_ef(to_clip(clip));
            py::dict d;
            d["ef"] = e.ef;
            d["ed_frame"] = e.ed_frame;
            d["es_frame"] = e.es_frame;
            d["areas"] = e.areas;
            return d;
        },
        py::arg("clip"));
    m.def(
        "ef_agreement",
        [](const std::vector<double>& estimated, const std::vector<double>& reference) {
            if (estimated.size() != reference.size()) {
                throw ShapeError("ef_agreement needs equally long lists");
            }
            std::vector<EfPair> pairs;
            for (std::size_t i = 0; i < estimated.size(); ++i) {
                pairs.push_back({std::to_string(i), estimated[i], reference[i]});
            }
            const auto r = ef_agreement(pairs);
            py::dict d;
            d["r2"] = r.r2_defined ? py::object(py::float_(r.r2)) : py::object(py::none());
            d["mae"] = r.mae;
            d["rmse"] = r.rmse;
            d["unit"] = r.unit;
            return d;
        },
        py::arg("estimated"), py::arg("reference"));

    m.def("load_clip", [](const fs::path& p) { return from_clip(load_video(p)); }, py::arg("path"));
    m.def(
        "save_clip", [](const fs::path& p, const FloatArray& a) { save_clip(p, to_clip(a)); }, py::arg("path"),
        py::arg("clip"));

    py::class_<VideoTokenizer>(m, "Tokenizer")
        .def_static("load", &VideoTokenizer::load, py::arg("checkpoint"))
        .def_property_readonly("grid",
                               [](const VideoTokenizer& t) {
                                   const auto& c = t.config();
                                   return py::make_tuple(c.grid_t(), c.grid_h(), c.grid_w());
                               })
        .def_property_readonly("vocab", [](const VideoTokenizer& t) { return t.config().vocab(); })
        .def(
            "tokenize",
            [](const VideoTokenizer& t, const FloatArray& clip) {
                const auto g = t.tokenize(to_clip(clip));
                py::array_t<std::uint32_t> out({g.t, g.h, g.w});
                std::copy(g.codes.begin(), g.codes.end(), out.mutable_data());
                return out;
            },
            py::arg("clip"))
        .def(
            "decode",
            [](const VideoTokenizer& t, const py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast>& codes) {
                if (codes.ndim() != 3) {
                    throw ShapeError("token arrays are [T', H', W']");
                }
                TokenGrid g(codes.shape(0), codes.shape(1), codes.shape(2));
                std::copy(codes.data(), codes.data() + codes.size(), g.codes.begin());
                return from_clip(t.decode(g));
            },
            py::arg("codes"));
}
