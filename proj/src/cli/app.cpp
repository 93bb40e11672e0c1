#include <functional>
#include <ostream>

#include <CLI11.hpp>

#include "cardiogen/cli/commands.hpp"

namespace cardiogen {

namespace {

struct CommandSpec {
    const char* name;
    const char* help;
    void (*run)(const RunConfig&, const fs::path&, std::ostream&);
};

const CommandSpec kCommands[] = {
    {"datagen", "write a synthetic paired ECG/video corpus to --out", cmd_datagen},
    {"train-tokenizer", "train the video tokenizer on paths.corpus", cmd_train_tokenizer},
    {"train-generator", "train the ECG-conditioned generator with a frozen tokenizer", cmd_train_generator},
    {"generate", "generate a clip from generate.ecg", cmd_generate},
    {"evaluate", "score generation or reconstruction on paths.corpus", cmd_evaluate},
    {"inspect-tokens", "tokenize inspect.clip and dump the grid", cmd_inspect_tokens},
};

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"ECG-conditioned echocardiography video generation"};
    app.require_subcommand(1);
    std::string config_path, out_dir;
    std::uint64_t seed = 0;
    std::vector<std::string> sets;
    const CommandSpec* chosen = nullptr;
    std::vector<CLI::App*> subs;
    for (const auto& c : kCommands) {
        auto* sub = app.add_subcommand(c.name, c.help);
        sub->add_option("--config", config_path, "flat key = value config file");
        sub->add_option("--seed", seed, "overrides the seed key");
        sub->add_option("--out", out_dir, "output directory")->required();
        sub->add_option("--set", sets, "key=value override, repeatable")->take_all();
        sub->callback([&chosen, &c] { chosen = &c; });
        subs.push_back(sub);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return 0;
        }
        err << "error: usage: " << e.what() << std::endl;
        return 2;
    }
    try {
        RunConfig cfg = config_path.empty() ? RunConfig() : RunConfig::from_file(config_path);
        for (const auto& s : sets) {
            cfg.apply_override(s);
        }
        for (auto* sub : subs) {
            if (sub->count("--seed") > 0) {
                cfg.set("seed", std::to_string(seed), "--seed");
            }
        }
        chosen->run(cfg, out_dir, out);
    } catch (const Error& e) {
        err << "error: " << e.kind() << ": " << e.what() << std::endl;
        return 1;
    } catch (const std::exception& e) {
        err << "error: internal: " << e.what() << std::endl;
        return 1;
    }
    return 0;
}

}  // namespace cardiogen
