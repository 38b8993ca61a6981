#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tesser/harness.hpp"

using namespace tesser;

namespace {

const char* kConfigKeysHelp = R"(Config keys (key=value file via --config, overridable with --set key=value):
  dataset.seed                procedural dataset seed (default 0)
  dataset.count               training-set size; held-out split starts here (default 1024)
  dataset.image_side          image side in pixels (default 32)
  dataset.noise               per-pixel uniform noise amplitude (default 0.02)
  run.surrogate               surrogate model name (default vit)
  run.targets                 comma list of transfer targets (default vit2,vits,cnn)
  run.methods                 comma list of pgd,mim,tesser,att-like (default all four)
  run.samples                 evaluation pool size (default 200)
  run.seed                    global attack seed (default 0)
  run.workers                 worker threads for per-image fan-out (default 1)
  run.output_dir              report directory (default out)
  run.cache_dir               checkpoint cache directory (default cache)
  model.<name>.epochs         training epochs for vit|vit2|vits|cnn
  model.<name>.lr             learning rate
  model.<name>.lr_decay       per-epoch geometric learning-rate decay (default 0.9)
  model.<name>.batch          batch size
  model.<name>.seed           training seed
  attack.epsilon              L-inf budget in pixel units (default 16/255)
  attack.steps                iterations T (default 10)
  attack.step_size            eta (default epsilon/steps)
  attack.momentum             MIM/TESSER momentum mu (default 1.0)
  attack.sigma                SSR Gaussian blur sigma, 0 disables (default 0.5)
  attack.blur_size            SSR kernel size, odd (default 3)
  attack.targeted             targeted mode, label (y+1) mod K (default false)
  attack.dropout.enabled      patch dropout on gradient cells (default false)
  attack.dropout.keep         keep probability (default 0.7)
  attack.dropout.cell         dropout cell size in pixels (default 4)
  modulation.gamma_base       FSGS baseline scale (default 0.5)
  modulation.lambda_attn      FSGS strength at the attention tap (default 0.4)
  modulation.lambda_qkv       FSGS strength at the QKV tap (default 0.5)
  modulation.lambda_mlp       FSGS strength at the MLP tap (default 0.55)
  modulation.omega_attn       gradient weakening at the attention tap (default 0.45)
  modulation.omega_qkv        gradient weakening at the QKV tap (default 0.5)
  modulation.omega_mlp        gradient weakening at the MLP tap (default 0.7)
  modulation.l_cut            attention-gradient truncation depth (default ceil(10L/12))
  modulation.early_layers     comma list of early blocks with inverted FSGS polarity
  modulation.random_scaling   random-scaling ablation baseline (default false)
  modulation.include_cls      include CLS token in importance stats (default true)
  sweep.sigmas                comma list for sweep-sigma (default 0,0.5,0.7,1.0)
  ablation.samples            pool size for ablate, 0 = run.samples (default 0)
  theorem1.tokens|dim|trials|semantic_fraction|rho_sem|rho_bg|norm_sem|norm_bg|
  theorem1.gamma_base|lambda|seed
                              Monte-Carlo alignment experiment parameters

Environment:
  TESSER_OUTPUT_DIR           overrides run.output_dir (CLI --out wins over both)
)";

struct CliOptions {
    std::string config_path;
    std::vector<std::string> sets;
    std::string out_dir;
    std::string cache_dir;
    long long seed = -1;
    int samples = -1;
    int workers = -1;
    std::string methods;
    std::string model;
    std::string sigmas;
    bool targeted = false;
};

ExperimentConfig build_config(const CliOptions& opt) {
    ConfigMap map;
    if (!opt.config_path.empty()) map = ConfigMap::parse_file(opt.config_path);
    for (const auto& kv : opt.sets) map.set_pair(kv);

    if (const char* env = std::getenv("TESSER_OUTPUT_DIR"); env && *env)
        map.set("run.output_dir", env);
    if (!opt.out_dir.empty()) map.set("run.output_dir", opt.out_dir);
    if (!opt.cache_dir.empty()) map.set("run.cache_dir", opt.cache_dir);
    if (opt.seed >= 0) map.set("run.seed", std::to_string(opt.seed));
    if (opt.samples >= 0) map.set("run.samples", std::to_string(opt.samples));
    if (opt.workers >= 0) map.set("run.workers", std::to_string(opt.workers));
    if (!opt.methods.empty()) map.set("run.methods", opt.methods);
    if (!opt.sigmas.empty()) map.set("sweep.sigmas", opt.sigmas);
    if (opt.targeted) map.set("attack.targeted", "true");
    return ExperimentConfig::from_map(map);
}

std::vector<std::string> roster_selection(const ExperimentConfig& cfg, const std::string& model) {
    if (model.empty() || model == "all") {
        std::vector<std::string> out{cfg.surrogate};
        for (const auto& t : cfg.targets) out.push_back(t);
        return out;
    }
    if (!cfg.roster.count(model)) throw ConfigError("unresolvable model '" + model + "'");
    return {model};
}

void print_outcome_line(const MethodOutcome& m) {
    std::printf("%-8s  white-box %6.2f%%", m.method.c_str(), m.white_box_asr);
    if (!m.target_asr.empty()) {
        double mean = 0;
        for (const auto& [t, v] : m.target_asr) mean += v;
        std::printf("  mean-transfer %6.2f%%", mean / static_cast<double>(m.target_asr.size()));
        for (const auto& [t, v] : m.target_asr) std::printf("  %s %6.2f%%", t.c_str(), v);
    }
    std::printf("  hfer %.4f  conf %.4f  stab %.2f  (%.2fs/img)\n", m.hfer_mean, m.conf_mean,
                m.stab_mean, m.mean_seconds);
}

int cmd_train(const CliOptions& opt) {
    ExperimentConfig cfg = build_config(opt);
    for (const auto& name : roster_selection(cfg, opt.model)) {
        Model m = load_or_train(cfg.roster.at(name), cfg.dataset, cfg.cache_dir);
        std::printf("%-5s  kind %s  heldout accuracy %.4f\n", name.c_str(),
                    kind_name(m.desc.kind).c_str(), m.clean_accuracy);
    }
    return 0;
}

int cmd_eval(const CliOptions& opt) { return cmd_train(opt); }

int cmd_attack(const CliOptions& opt, bool with_targets) {
    ExperimentConfig cfg = build_config(opt);
    if (!with_targets) cfg.targets.clear();
    ExperimentReport rep = run_experiment(cfg);
    Model surrogate = load_or_train(cfg.roster.at(cfg.surrogate), cfg.dataset, cfg.cache_dir);
    write_report_files(rep, cfg, &surrogate);
    std::printf("config %s  n %d\n", rep.config_hash.c_str(), rep.n);
    for (const auto& [name, acc] : rep.model_accuracy)
        std::printf("model %-5s clean accuracy %.4f\n", name.c_str(), acc);
    for (const auto& m : rep.methods) print_outcome_line(m);
    std::printf("reports written to %s\n", cfg.output_dir.c_str());
    return 0;
}

int cmd_ablate(const CliOptions& opt) {
    ExperimentConfig cfg = build_config(opt);
    auto rows = ablate_modules(cfg);
    write_ablation_files(rows, cfg);
    for (const auto& r : rows) {
        std::printf("%-12s ", r.subset.c_str());
        print_outcome_line(r.outcome);
    }
    std::printf("reports written to %s\n", cfg.output_dir.c_str());
    return 0;
}

int cmd_sweep(const CliOptions& opt) {
    ExperimentConfig cfg = build_config(opt);
    auto rows = sweep_sigma(cfg);
    write_sigma_files(rows, cfg);
    for (const auto& r : rows) {
        std::printf("sigma %.2f   ", r.sigma);
        print_outcome_line(r.outcome);
    }
    std::printf("reports written to %s\n", cfg.output_dir.c_str());
    return 0;
}

int cmd_theorem1(const CliOptions& opt) {
    ExperimentConfig cfg = build_config(opt);
    AlignmentSummary s = theorem1_montecarlo(cfg.theorem1);
    write_theorem1_file(s, cfg);
    std::printf("trials %zu  improved fraction %.4f  mean delta-cos %.6f\n", s.delta_cos.size(),
                s.improved_fraction, s.mean_delta_cos);
    std::printf("reports written to %s\n", cfg.output_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TESSER desk-scale adversarial-transferability laboratory"};
    app.require_subcommand(0, 1);  // unknown names then surface as extras, by name
    app.footer(kConfigKeysHelp);

    CliOptions opt;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config_path, "key=value config file");
        sub->add_option("--set", opt.sets, "override a config key (key=value, repeatable)");
        sub->add_option("--out", opt.out_dir, "output directory (overrides TESSER_OUTPUT_DIR)");
        sub->add_option("--cache", opt.cache_dir, "checkpoint cache directory");
        sub->add_option("--seed", opt.seed, "global attack/experiment seed");
        sub->add_option("--samples", opt.samples, "evaluation pool size");
        sub->add_option("--workers", opt.workers, "worker threads");
        sub->footer(kConfigKeysHelp);
        return sub;
    };

    CLI::App* train = add_common(app.add_subcommand("train", "train or load cached models"));
    train->add_option("--model", opt.model, "model name (vit|vit2|vits|cnn|all)");
    CLI::App* attack = add_common(
        app.add_subcommand("attack", "attack the surrogate, evaluate transfer, write reports"));
    attack->add_option("--methods", opt.methods, "comma list of pgd,mim,tesser,att-like");
    attack->add_flag("--targeted", opt.targeted, "targeted mode, label (y+1) mod K");
    CLI::App* eval = add_common(app.add_subcommand("eval", "report clean accuracy of the roster"));
    eval->add_option("--model", opt.model, "model name (vit|vit2|vits|cnn|all)");
    CLI::App* ablate = add_common(
        app.add_subcommand("ablate", "TESSER over all FSGS module subsets of {attn,qkv,mlp}"));
    (void)ablate;
    CLI::App* sweep = add_common(app.add_subcommand("sweep-sigma", "TESSER across SSR blur strengths"));
    sweep->add_option("--sigmas", opt.sigmas, "comma list of sigma values");
    CLI::App* analyze = add_common(app.add_subcommand(
        "analyze", "white-box attack run with spectral/stealth metrics and PGM dumps, no transfer"));
    analyze->add_option("--methods", opt.methods, "comma list of pgd,mim,tesser,att-like");
    CLI::App* theorem1 = add_common(
        app.add_subcommand("theorem1", "Monte-Carlo gradient-alignment experiment"));
    (void)theorem1;

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);  // prints one-line error or help; help exits 0
    }
    if (app.get_subcommands().empty()) {
        std::fprintf(stderr, "error: argument: a subcommand is required (see --help)\n");
        return 2;
    }

    try {
        if (train->parsed()) return cmd_train(opt);
        if (eval->parsed()) return cmd_eval(opt);
        if (attack->parsed()) return cmd_attack(opt, true);
        if (analyze->parsed()) return cmd_attack(opt, false);
        if (ablate->parsed()) return cmd_ablate(opt);
        if (sweep->parsed()) return cmd_sweep(opt);
        if (theorem1->parsed()) return cmd_theorem1(opt);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: config: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: io: %s\n", e.what());
        return 3;
    } catch (const TrainingFailure& e) {
        std::fprintf(stderr, "error: training: %s (epoch %d)\n", e.what(), e.epoch);
        return 4;
    } catch (const UnsupportedArchitecture& e) {
        std::fprintf(stderr, "error: architecture: %s\n", e.what());
        return 5;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "error: format: %s\n", e.what());
        return 6;
    } catch (const ContractViolation& e) {
        std::fprintf(stderr, "error: internal: %s\n", e.what());
        return 7;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: argument: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
