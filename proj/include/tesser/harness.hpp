#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "tesser/alignment_mc.hpp"
#include "tesser/attack.hpp"
#include "tesser/checkpoint.hpp"
#include "tesser/config.hpp"
#include "tesser/dataset.hpp"
#include "tesser/errors.hpp"
#include "tesser/fft.hpp"
#include "tesser/metrics.hpp"
#include "tesser/pgm.hpp"
#include "tesser/train.hpp"

namespace tesser {

inline constexpr const char* kLibraryVersion = "0.1.0";
inline constexpr int kReportFormatVersion = 1;

enum class ModelKind { vit, cnn };

inline std::string kind_name(ModelKind k) { return k == ModelKind::vit ? "vit" : "cnn"; }

struct ModelDescriptor {
    std::string name;
    ModelKind kind = ModelKind::vit;
    ViTArch vit_arch;
    CnnArch cnn_arch;
    int epochs = 12;
    double lr = 0.01;
    double lr_decay = 0.9;
    int batch = 16;
    std::uint64_t seed = 0;
};

// Fixed roster of desk-scale models. "vit" doubles as the default surrogate;
// the rest are transfer targets. Training budgets are overridable through
// model.<name>.{epochs,lr,batch,seed} config keys.
inline std::map<std::string, ModelDescriptor> model_presets() {
    std::map<std::string, ModelDescriptor> out;

    ModelDescriptor vit;
    vit.name = "vit";
    vit.kind = ModelKind::vit;
    vit.epochs = 12;
    vit.lr = 0.01;
    vit.seed = 11;
    out["vit"] = vit;

    ModelDescriptor vit2 = vit;
    vit2.name = "vit2";
    vit2.seed = 23;
    out["vit2"] = vit2;

    ModelDescriptor vits = vit;
    vits.name = "vits";
    vits.vit_arch.embed_dim = 48;
    vits.vit_arch.depth = 4;
    vits.seed = 37;
    out["vits"] = vits;

    ModelDescriptor cnn;
    cnn.name = "cnn";
    cnn.kind = ModelKind::cnn;
    cnn.epochs = 12;
    cnn.lr = 0.005;
    cnn.seed = 51;
    out["cnn"] = cnn;

    return out;
}

struct Model {
    ModelDescriptor desc;
    std::optional<ViTParams> vit;
    std::optional<CnnParams> cnn;
    double clean_accuracy = 0.0;

    int classes() const {
        return desc.kind == ModelKind::vit ? desc.vit_arch.classes : desc.cnn_arch.classes;
    }

    int predict(const Tensor& x) const {
        if (desc.kind == ModelKind::vit) {
            ForwardTrace tr;
            Tensor lg = vit_forward(*vit, x, tr);
            return static_cast<int>(argmax(lg.ptr(), desc.vit_arch.classes));
        }
        CnnTrace tr;
        Tensor lg = cnn_forward(*cnn, x, tr);
        return static_cast<int>(argmax(lg.ptr(), desc.cnn_arch.classes));
    }

    AttackResult attack(const Tensor& x, int y, const AttackConfig& cfg) const {
        return desc.kind == ModelKind::vit ? run_attack(*vit, x, y, cfg)
                                           : run_attack(*cnn, x, y, cfg);
    }
};

namespace detail {

inline std::string descriptor_key(const ModelDescriptor& d, const DatasetSpec& spec) {
    std::ostringstream s;
    s << "kind=" << kind_name(d.kind) << "\nname=" << d.name << "\n";
    if (d.kind == ModelKind::vit) {
        const ViTArch& a = d.vit_arch;
        s << "arch=vit," << a.image_side << "," << a.channels << "," << a.patch_size << ","
          << a.embed_dim << "," << a.heads << "," << a.depth << "," << a.mlp_ratio << ","
          << a.classes << "\n";
    } else {
        const CnnArch& a = d.cnn_arch;
        s << "arch=cnn," << a.image_side << "," << a.channels << "," << a.conv1_out << ","
          << a.conv2_out << "," << a.classes << "\n";
    }
    s << "data=" << spec.seed << "," << spec.count << "," << spec.classes << ","
      << spec.image_side << "," << spec.channels << "," << spec.noise << "\n";
    s << "train=" << d.epochs << "," << d.lr << "," << d.lr_decay << "," << d.batch << ","
      << d.seed << "\n";
    s << "format=" << kCheckpointVersion << "\n";
    return s.str();
}

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
}

inline std::string fmt4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

// Fan out fn(0..n-1) over a small thread pool. Work items land in caller-owned
// slots indexed by i, so the reduction order never depends on thread timing.
template <typename Fn>
void parallel_for(std::int64_t n, int workers, Fn&& fn) {
    if (n <= 0) return;
    if (workers <= 1 || n == 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::int64_t> next{0};
    std::exception_ptr first_error;
    std::mutex err_mu;
    auto worker = [&] {
        for (;;) {
            std::int64_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    int count = std::min<std::int64_t>(workers, n);
    pool.reserve(static_cast<std::size_t>(count));
    for (int w = 0; w < count; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace detail

// Trains the model or loads it from the content-addressed checkpoint cache.
// Freshly trained parameters are quantized, saved, and read back so the
// in-memory bits match what every later cached run will load.
inline Model load_or_train(const ModelDescriptor& desc, const DatasetSpec& spec,
                           const std::string& cache_dir) {
    detail::ensure_dir(cache_dir);
    std::string key = detail::descriptor_key(desc, spec);
    std::string path = cache_dir + "/" + desc.name + "-" + hex64(fnv1a64(key)) + ".tsrc";

    Model m;
    m.desc = desc;
    if (!std::filesystem::exists(path)) {
        try {
            if (desc.kind == ModelKind::vit) {
                ViTParams p = train_vit(desc.vit_arch, spec, desc.epochs, desc.lr, desc.seed,
                                        desc.batch, nullptr, desc.lr_decay);
                quantize_f32(p);
                save_checkpoint(p, path);
            } else {
                CnnParams p = train_cnn(desc.cnn_arch, spec, desc.epochs, desc.lr, desc.seed,
                                        desc.batch, nullptr, desc.lr_decay);
                quantize_f32(p);
                save_checkpoint(p, path);
            }
        } catch (const TrainingFailure& e) {
            throw TrainingFailure("model '" + desc.name + "': " + e.what(), e.epoch);
        }
    }
    if (desc.kind == ModelKind::vit)
        m.vit = load_vit_checkpoint(path, desc.vit_arch);
    else
        m.cnn = load_cnn_checkpoint(path, desc.cnn_arch);

    std::int64_t heldout = spec.count;
    if (desc.kind == ModelKind::vit)
        m.clean_accuracy = eval_accuracy(*m.vit, spec, heldout, 256);
    else
        m.clean_accuracy = eval_accuracy(*m.cnn, spec, heldout, 256);
    return m;
}

struct ExperimentConfig {
    DatasetSpec dataset;
    std::string surrogate = "vit";
    std::vector<std::string> targets{"vit2", "vits", "cnn"};
    std::map<std::string, ModelDescriptor> roster = model_presets();

    AttackConfig attack;  // shared ε/T/η/μ/σ/targeted/dropout knobs
    std::vector<std::string> methods{"att-like", "mim", "pgd", "tesser"};

    int samples = 200;
    std::uint64_t seed = 0;
    int workers = 1;
    std::string output_dir = "out";
    std::string cache_dir = "cache";

    std::vector<double> sweep_sigmas{0.0, 0.5, 0.7, 1.0};
    int ablation_samples = 0;  // 0 → use `samples`

    AlignmentTrialConfig theorem1;

    ExperimentConfig() {
        attack.method = AttackMethod::tesser;
        attack.modulation = ModulationConfig::defaults_for_depth(roster.at("vit").vit_arch.depth);
    }

    void validate() const {
        require(samples >= 1, "ExperimentConfig: samples must be >= 1");
        require(workers >= 1, "ExperimentConfig: workers must be >= 1");
        require(!methods.empty(), "ExperimentConfig: methods must be nonempty");
        if (!roster.count(surrogate))
            throw ConfigError("unresolvable surrogate model '" + surrogate + "'");
        for (const auto& t : targets)
            if (!roster.count(t)) throw ConfigError("unresolvable target model '" + t + "'");
        std::set<std::string> known{"pgd", "mim", "tesser", "att-like"};
        for (const auto& m : methods)
            if (!known.count(m)) throw ConfigError("unknown attack method '" + m + "'");
        for (double s : sweep_sigmas)
            require(s >= 0.0, "ExperimentConfig: sweep sigmas must be non-negative");
        require(ablation_samples >= 0, "ExperimentConfig: ablation samples must be >= 0");
        attack.validate();
        const ModelDescriptor& sur = roster.at(surrogate);
        if (sur.kind == ModelKind::vit)
            attack.modulation.validate(sur.vit_arch.depth);
        theorem1.validate();
    }

    // Effective experiment parameters, defaults materialized. Execution
    // details (workers, directories) stay out so they cannot perturb the
    // config hash or the echoed config — reports must be byte-identical
    // across worker counts and relocatable across machines.
    ConfigMap to_map() const {
        ConfigMap m;
        auto num = [](double v) {
            std::ostringstream s;
            s.precision(17);
            s << v;
            return s.str();
        };
        m.set("dataset.seed", std::to_string(dataset.seed));
        m.set("dataset.count", std::to_string(dataset.count));
        m.set("dataset.image_side", std::to_string(dataset.image_side));
        m.set("dataset.noise", num(dataset.noise));

        m.set("run.surrogate", surrogate);
        std::string tlist;
        for (const auto& t : targets) tlist += (tlist.empty() ? "" : ",") + t;
        m.set("run.targets", tlist);
        std::string mlist;
        for (const auto& me : methods) mlist += (mlist.empty() ? "" : ",") + me;
        m.set("run.methods", mlist);
        m.set("run.samples", std::to_string(samples));
        m.set("run.seed", std::to_string(seed));

        std::set<std::string> used{surrogate};
        used.insert(targets.begin(), targets.end());
        for (const auto& name : used) {
            const ModelDescriptor& d = roster.at(name);
            m.set("model." + name + ".epochs", std::to_string(d.epochs));
            m.set("model." + name + ".lr", num(d.lr));
            m.set("model." + name + ".lr_decay", num(d.lr_decay));
            m.set("model." + name + ".batch", std::to_string(d.batch));
            m.set("model." + name + ".seed", std::to_string(d.seed));
        }

        m.set("attack.epsilon", num(attack.epsilon));
        m.set("attack.steps", std::to_string(attack.steps));
        m.set("attack.step_size", num(attack.step_size));
        m.set("attack.momentum", num(attack.momentum));
        m.set("attack.sigma", num(attack.sigma));
        m.set("attack.blur_size", std::to_string(attack.blur_size));
        m.set("attack.targeted", attack.targeted ? "true" : "false");
        m.set("attack.dropout.enabled", attack.dropout.enabled ? "true" : "false");
        m.set("attack.dropout.keep", num(attack.dropout.keep));
        m.set("attack.dropout.cell", std::to_string(attack.dropout.cell));

        const ModulationConfig& mc = attack.modulation;
        m.set("modulation.gamma_base", num(mc.gamma_base));
        m.set("modulation.lambda_attn", num(mc.lambda_attn));
        m.set("modulation.lambda_qkv", num(mc.lambda_qkv));
        m.set("modulation.lambda_mlp", num(mc.lambda_mlp));
        m.set("modulation.omega_attn", num(mc.omega_attn));
        m.set("modulation.omega_qkv", num(mc.omega_qkv));
        m.set("modulation.omega_mlp", num(mc.omega_mlp));
        m.set("modulation.l_cut", std::to_string(mc.l_cut));
        std::string early;
        for (int e : mc.early_set) early += (early.empty() ? "" : ",") + std::to_string(e);
        m.set("modulation.early_layers", early);
        m.set("modulation.random_scaling", mc.random_scaling ? "true" : "false");
        m.set("modulation.include_cls", mc.include_cls ? "true" : "false");

        std::string sig;
        for (double s : sweep_sigmas) sig += (sig.empty() ? "" : ",") + num(s);
        m.set("sweep.sigmas", sig);
        m.set("ablation.samples", std::to_string(ablation_samples ? ablation_samples : samples));

        m.set("theorem1.tokens", std::to_string(theorem1.tokens));
        m.set("theorem1.dim", std::to_string(theorem1.dim));
        m.set("theorem1.semantic_fraction", num(theorem1.semantic_fraction));
        m.set("theorem1.rho_sem", num(theorem1.rho_sem));
        m.set("theorem1.rho_bg", num(theorem1.rho_bg));
        m.set("theorem1.norm_sem", num(theorem1.norm_sem));
        m.set("theorem1.norm_bg", num(theorem1.norm_bg));
        m.set("theorem1.trials", std::to_string(theorem1.trials));
        m.set("theorem1.gamma_base", num(theorem1.gamma_base));
        m.set("theorem1.lambda", num(theorem1.lambda));
        m.set("theorem1.seed", std::to_string(theorem1.seed));
        return m;
    }

    std::string config_hash() const { return to_map().hash_hex(); }

    static ExperimentConfig from_map(const ConfigMap& m) {
        ExperimentConfig cfg;
        cfg.dataset.seed = static_cast<std::uint64_t>(m.get_int("dataset.seed", static_cast<std::int64_t>(cfg.dataset.seed)));
        cfg.dataset.count = m.get_int("dataset.count", cfg.dataset.count);
        cfg.dataset.image_side = static_cast<int>(m.get_int("dataset.image_side", cfg.dataset.image_side));
        cfg.dataset.noise = m.get_double("dataset.noise", cfg.dataset.noise);

        cfg.surrogate = m.get_string("run.surrogate", cfg.surrogate);
        cfg.targets = m.get_string_list("run.targets", cfg.targets);
        cfg.methods = m.get_string_list("run.methods", cfg.methods);
        cfg.samples = static_cast<int>(m.get_int("run.samples", cfg.samples));
        cfg.seed = static_cast<std::uint64_t>(m.get_int("run.seed", static_cast<std::int64_t>(cfg.seed)));
        cfg.workers = static_cast<int>(m.get_int("run.workers", cfg.workers));
        cfg.output_dir = m.get_string("run.output_dir", cfg.output_dir);
        cfg.cache_dir = m.get_string("run.cache_dir", cfg.cache_dir);

        for (auto& [name, d] : cfg.roster) {
            d.epochs = static_cast<int>(m.get_int("model." + name + ".epochs", d.epochs));
            d.lr = m.get_double("model." + name + ".lr", d.lr);
            d.lr_decay = m.get_double("model." + name + ".lr_decay", d.lr_decay);
            d.batch = static_cast<int>(m.get_int("model." + name + ".batch", d.batch));
            d.seed = static_cast<std::uint64_t>(m.get_int("model." + name + ".seed", static_cast<std::int64_t>(d.seed)));
        }

        AttackConfig& a = cfg.attack;
        a.epsilon = m.get_double("attack.epsilon", a.epsilon);
        a.steps = static_cast<int>(m.get_int("attack.steps", a.steps));
        double default_step = a.steps > 0 ? a.epsilon / a.steps : a.epsilon;
        a.step_size = m.get_double("attack.step_size", default_step);
        a.momentum = m.get_double("attack.momentum", a.momentum);
        a.sigma = m.get_double("attack.sigma", a.sigma);
        a.blur_size = static_cast<int>(m.get_int("attack.blur_size", a.blur_size));
        a.targeted = m.get_bool("attack.targeted", a.targeted);
        a.dropout.enabled = m.get_bool("attack.dropout.enabled", a.dropout.enabled);
        a.dropout.keep = m.get_double("attack.dropout.keep", a.dropout.keep);
        a.dropout.cell = static_cast<int>(m.get_int("attack.dropout.cell", a.dropout.cell));
        a.seed = cfg.seed;

        ModulationConfig& mc = a.modulation;
        mc.gamma_base = m.get_double("modulation.gamma_base", mc.gamma_base);
        mc.lambda_attn = m.get_double("modulation.lambda_attn", mc.lambda_attn);
        mc.lambda_qkv = m.get_double("modulation.lambda_qkv", mc.lambda_qkv);
        mc.lambda_mlp = m.get_double("modulation.lambda_mlp", mc.lambda_mlp);
        mc.omega_attn = m.get_double("modulation.omega_attn", mc.omega_attn);
        mc.omega_qkv = m.get_double("modulation.omega_qkv", mc.omega_qkv);
        mc.omega_mlp = m.get_double("modulation.omega_mlp", mc.omega_mlp);
        mc.l_cut = static_cast<int>(m.get_int("modulation.l_cut", mc.l_cut));
        if (m.has("modulation.early_layers")) {
            mc.early_set.clear();
            for (const auto& tok : m.get_string_list("modulation.early_layers", {})) {
                try {
                    mc.early_set.insert(std::stoi(tok));
                } catch (const std::exception&) {
                    throw ConfigError("modulation.early_layers: expected integer, got '" + tok + "'");
                }
            }
        } else {
            (void)m.get_string("modulation.early_layers", "");
        }
        mc.random_scaling = m.get_bool("modulation.random_scaling", mc.random_scaling);
        mc.include_cls = m.get_bool("modulation.include_cls", mc.include_cls);

        cfg.sweep_sigmas = m.get_double_list("sweep.sigmas", cfg.sweep_sigmas);
        cfg.ablation_samples = static_cast<int>(m.get_int("ablation.samples", cfg.ablation_samples));

        AlignmentTrialConfig& t1 = cfg.theorem1;
        t1.tokens = static_cast<int>(m.get_int("theorem1.tokens", t1.tokens));
        t1.dim = static_cast<int>(m.get_int("theorem1.dim", t1.dim));
        t1.semantic_fraction = m.get_double("theorem1.semantic_fraction", t1.semantic_fraction);
        t1.rho_sem = m.get_double("theorem1.rho_sem", t1.rho_sem);
        t1.rho_bg = m.get_double("theorem1.rho_bg", t1.rho_bg);
        t1.norm_sem = m.get_double("theorem1.norm_sem", t1.norm_sem);
        t1.norm_bg = m.get_double("theorem1.norm_bg", t1.norm_bg);
        t1.trials = static_cast<int>(m.get_int("theorem1.trials", t1.trials));
        t1.gamma_base = m.get_double("theorem1.gamma_base", t1.gamma_base);
        t1.lambda = m.get_double("theorem1.lambda", t1.lambda);
        t1.seed = static_cast<std::uint64_t>(m.get_int("theorem1.seed", static_cast<std::int64_t>(t1.seed)));

        m.reject_unconsumed();
        cfg.validate();
        return cfg;
    }
};

// Attack configuration for a named method. "att-like" is TESSER with FSGS
// disabled (λ=0 everywhere) and no SSR blur — weakening and truncation only.
inline AttackConfig method_config(const std::string& method, const ExperimentConfig& cfg) {
    AttackConfig a = cfg.attack;
    a.seed = cfg.seed;
    if (method == "pgd") {
        a.method = AttackMethod::pgd;
        a.sigma = 0.0;
    } else if (method == "mim") {
        a.method = AttackMethod::mim;
        a.sigma = 0.0;
    } else if (method == "tesser") {
        a.method = AttackMethod::tesser;
    } else if (method == "att-like") {
        a.method = AttackMethod::tesser;
        a.sigma = 0.0;
        a.modulation.lambda_attn = 0.0;
        a.modulation.lambda_qkv = 0.0;
        a.modulation.lambda_mlp = 0.0;
    } else {
        throw ConfigError("unknown attack method '" + method + "'");
    }
    return a;
}

struct EvalPool {
    std::vector<Sample> samples;
    std::vector<std::int64_t> indices;  // dataset indices, for provenance
};

// First `count` held-out images (dataset indices ≥ spec.count) that the
// surrogate classifies correctly.
inline EvalPool build_eval_pool(const Model& surrogate, const DatasetSpec& spec, int count) {
    EvalPool pool;
    std::int64_t limit = spec.count + std::max<std::int64_t>(4096, 32ll * count);
    for (std::int64_t i = spec.count; static_cast<int>(pool.samples.size()) < count && i < limit; ++i) {
        Sample s = make_sample(spec, i);
        if (surrogate.predict(s.x) == s.label) {
            pool.indices.push_back(i);
            pool.samples.push_back(std::move(s));
        }
    }
    if (static_cast<int>(pool.samples.size()) < count)
        throw TrainingFailure("eval pool: surrogate accuracy too low to collect " +
                                  std::to_string(count) + " correctly classified images",
                              -1);
    return pool;
}

struct PerImageRow {
    int image = 0;
    std::int64_t dataset_index = 0;
    int label = 0;
    bool success = false;  // on the surrogate (white-box)
    int stabilization = -1;
    double final_conf = 0.0;
    double hfer_v = 0.0;
    double psnr_v = 0.0;
    double ssim_v = 0.0;
    double seconds = 0.0;
    std::map<std::string, bool> target_success;
};

struct MethodOutcome {
    std::string method;
    int n = 0;
    double white_box_asr = 0.0;             // percent
    std::map<std::string, double> target_asr;  // percent, by target name
    double conf_mean = 0.0;
    double hfer_mean = 0.0;
    double psnr_mean = 0.0;
    double ssim_mean = 0.0;
    double stab_mean = -1.0;  // -1 when no image stabilized
    double mean_seconds = 0.0;
    std::vector<PerImageRow> rows;
    Tensor first_delta;  // image 0 artifacts for spectrum/saliency dumps
    Tensor first_x_adv;
};

// Runs one attack method over the pool on the surrogate and scores every
// adversarial image against each target. Images fan out across workers;
// all reductions happen afterwards in image order.
inline MethodOutcome run_method(const std::string& method, const Model& surrogate,
                                const std::vector<const Model*>& targets, const EvalPool& pool,
                                const ExperimentConfig& cfg) {
    AttackConfig attack_cfg = method_config(method, cfg);
    int n = static_cast<int>(pool.samples.size());

    MethodOutcome out;
    out.method = method;
    out.n = n;
    out.rows.resize(static_cast<std::size_t>(n));

    detail::parallel_for(n, cfg.workers, [&](std::int64_t i) {
        const Sample& s = pool.samples[static_cast<std::size_t>(i)];
        AttackConfig ac = attack_cfg;
        ac.stream = static_cast<std::uint64_t>(i);
        AttackResult r = surrogate.attack(s.x, s.label, ac);

        PerImageRow row;
        row.image = static_cast<int>(i);
        row.dataset_index = pool.indices[static_cast<std::size_t>(i)];
        row.label = s.label;
        row.success = r.success;
        std::vector<int> preds;
        preds.reserve(r.trace.size());
        for (const auto& e : r.trace) preds.push_back(e.pred);
        if (auto st = stabilization_iteration(preds, s.label)) row.stabilization = *st;
        row.final_conf = r.final_conf;
        row.hfer_v = hfer(r.delta).hfer;
        row.psnr_v = psnr(s.x, r.x_adv);
        row.ssim_v = ssim(s.x, r.x_adv);
        row.seconds = r.seconds;

        int target_label = targeted_wrap(s.label, surrogate.classes());
        for (const Model* t : targets) {
            int pred = t->predict(r.x_adv);
            bool hit = ac.targeted ? pred == target_label : pred != s.label;
            row.target_success[t->desc.name] = hit;
        }
        if (i == 0) {
            out.first_delta = r.delta;
            out.first_x_adv = r.x_adv;
        }
        out.rows[static_cast<std::size_t>(i)] = std::move(row);
    });

    int wb = 0, stab_n = 0;
    double conf = 0, hf = 0, ps = 0, ss = 0, stab = 0, secs = 0;
    std::map<std::string, int> thits;
    for (const Model* t : targets) thits[t->desc.name] = 0;
    for (const auto& row : out.rows) {
        if (row.success) ++wb;
        if (row.stabilization >= 0) {
            stab += row.stabilization;
            ++stab_n;
        }
        conf += row.final_conf;
        hf += row.hfer_v;
        ps += row.psnr_v;
        ss += row.ssim_v;
        secs += row.seconds;
        for (const auto& [name, hit] : row.target_success)
            if (hit) ++thits[name];
    }
    out.white_box_asr = 100.0 * wb / n;
    for (const auto& [name, hits] : thits) out.target_asr[name] = 100.0 * hits / n;
    out.conf_mean = conf / n;
    out.hfer_mean = hf / n;
    out.psnr_mean = ps / n;
    out.ssim_mean = ss / n;
    if (stab_n > 0) out.stab_mean = stab / stab_n;
    out.mean_seconds = secs / n;
    return out;
}

struct ExperimentReport {
    std::string config_hash;
    ConfigMap config_echo;
    std::string surrogate;
    std::vector<std::string> targets;
    std::map<std::string, double> model_accuracy;
    int n = 0;
    std::vector<MethodOutcome> methods;  // sorted by method name
};

inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();

    Model surrogate = load_or_train(cfg.roster.at(cfg.surrogate), cfg.dataset, cfg.cache_dir);
    std::map<std::string, Model> target_models;
    for (const auto& name : cfg.targets)
        target_models.emplace(name, load_or_train(cfg.roster.at(name), cfg.dataset, cfg.cache_dir));

    EvalPool pool = build_eval_pool(surrogate, cfg.dataset, cfg.samples);

    std::vector<const Model*> targets;
    std::vector<std::string> target_names;
    for (const auto& [name, m] : target_models) {
        targets.push_back(&m);
        target_names.push_back(name);
    }

    ExperimentReport rep;
    rep.config_hash = cfg.config_hash();
    rep.config_echo = cfg.to_map();
    rep.surrogate = cfg.surrogate;
    rep.targets = target_names;
    rep.model_accuracy[cfg.surrogate] = surrogate.clean_accuracy;
    for (const auto& [name, m] : target_models) rep.model_accuracy[name] = m.clean_accuracy;
    rep.n = cfg.samples;

    std::vector<std::string> methods = cfg.methods;
    std::sort(methods.begin(), methods.end());
    for (const auto& method : methods)
        rep.methods.push_back(run_method(method, surrogate, targets, pool, cfg));
    return rep;
}

struct AblationRow {
    std::string subset;  // "none", "attn", "attn+qkv", ...
    bool attn = false, qkv = false, mlp = false;
    MethodOutcome outcome;
};

// TESSER with FSGS enabled on each subset of {attn, qkv, mlp}; λ_m = 0
// disables a module. Rows ordered by subset size, then lexicographically.
inline std::vector<AblationRow> ablate_modules(const ExperimentConfig& cfg) {
    cfg.validate();
    Model surrogate = load_or_train(cfg.roster.at(cfg.surrogate), cfg.dataset, cfg.cache_dir);
    std::map<std::string, Model> target_models;
    for (const auto& name : cfg.targets)
        target_models.emplace(name, load_or_train(cfg.roster.at(name), cfg.dataset, cfg.cache_dir));
    std::vector<const Model*> targets;
    for (const auto& [name, m] : target_models) targets.push_back(&m);

    int samples = cfg.ablation_samples > 0 ? cfg.ablation_samples : cfg.samples;
    EvalPool pool = build_eval_pool(surrogate, cfg.dataset, samples);

    struct Subset {
        bool attn, qkv, mlp;
    };
    std::vector<Subset> subsets = {{false, false, false}, {true, false, false}, {false, false, true},
                                   {false, true, false},  {true, false, true},  {true, true, false},
                                   {false, true, true},   {true, true, true}};

    std::vector<AblationRow> rows;
    for (const Subset& sub : subsets) {
        ExperimentConfig sub_cfg = cfg;
        sub_cfg.samples = samples;
        if (!sub.attn) sub_cfg.attack.modulation.lambda_attn = 0.0;
        if (!sub.qkv) sub_cfg.attack.modulation.lambda_qkv = 0.0;
        if (!sub.mlp) sub_cfg.attack.modulation.lambda_mlp = 0.0;

        AblationRow row;
        row.attn = sub.attn;
        row.qkv = sub.qkv;
        row.mlp = sub.mlp;
        if (!sub.attn && !sub.qkv && !sub.mlp) {
            row.subset = "none";
        } else {
            std::string s;
            if (sub.attn) s += "attn";
            if (sub.qkv) s += (s.empty() ? "" : "+") + std::string("qkv");
            if (sub.mlp) s += (s.empty() ? "" : "+") + std::string("mlp");
            row.subset = s;
        }
        row.outcome = run_method("tesser", surrogate, targets, pool, sub_cfg);
        rows.push_back(std::move(row));
    }
    return rows;
}

struct SigmaRow {
    double sigma = 0.0;
    MethodOutcome outcome;
};

// One TESSER run per σ in cfg.sweep_sigmas.
inline std::vector<SigmaRow> sweep_sigma(const ExperimentConfig& cfg) {
    cfg.validate();
    Model surrogate = load_or_train(cfg.roster.at(cfg.surrogate), cfg.dataset, cfg.cache_dir);
    std::map<std::string, Model> target_models;
    for (const auto& name : cfg.targets)
        target_models.emplace(name, load_or_train(cfg.roster.at(name), cfg.dataset, cfg.cache_dir));
    std::vector<const Model*> targets;
    for (const auto& [name, m] : target_models) targets.push_back(&m);

    EvalPool pool = build_eval_pool(surrogate, cfg.dataset, cfg.samples);

    std::vector<SigmaRow> rows;
    for (double sigma : cfg.sweep_sigmas) {
        ExperimentConfig s_cfg = cfg;
        s_cfg.attack.sigma = sigma;
        SigmaRow row;
        row.sigma = sigma;
        row.outcome = run_method("tesser", surrogate, targets, pool, s_cfg);
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---- report emission ----------------------------------------------------
//
// Every file below is byte-deterministic for a fixed config, independent of
// worker count, except timing.csv: wall-clock numbers are machine noise by
// nature, so they are quarantined in their own file and never enter
// report.json or the other CSVs.

namespace detail {

inline std::string csv_header_comment(const std::string& hash) { return "# config " + hash + "\n"; }

inline std::string mean_target_asr_str(const MethodOutcome& m) {
    if (m.target_asr.empty()) return fmt4(0.0);
    double acc = 0.0;
    for (const auto& [k, v] : m.target_asr) acc += v;
    return fmt4(acc / static_cast<double>(m.target_asr.size()));
}

// Channel-mean log power spectrum of a [C,H,W] perturbation, centered.
inline Tensor spectrum_image(const Tensor& delta) {
    require(delta.rank() == 3, "spectrum_image: expected [C,H,W], got " + shape_str(delta));
    std::int64_t c = delta.shape[0], h = delta.shape[1], w = delta.shape[2];
    Tensor acc({h, w});
    Tensor plane({h, w});
    for (std::int64_t ch = 0; ch < c; ++ch) {
        std::copy_n(delta.ptr() + ch * h * w, h * w, plane.ptr());
        Tensor p = fft2_power(plane);
        for (std::int64_t i = 0; i < h * w; ++i)
            acc.data[static_cast<std::size_t>(i)] += std::log1p(p.data[static_cast<std::size_t>(i)]);
    }
    for (double& v : acc.data) v /= static_cast<double>(c);
    return acc;
}

// Token-norm saliency of the final residual stream (CLS excluded), upsampled
// to image resolution by nearest neighbour.
inline Tensor saliency_image(const Model& m, const Tensor& x) {
    require(m.desc.kind == ModelKind::vit, "saliency_image: requires a ViT model");
    ForwardTrace tr;
    vit_forward(*m.vit, x, tr);
    const ViTArch& a = m.desc.vit_arch;
    int g = a.grid();
    Tensor grid_map({g, g});
    for (int t = 0; t < a.tokens(); ++t) {
        const double* row = tr.z_final.ptr() + (t + 1) * a.embed_dim;
        double norm = 0.0;
        for (int d = 0; d < a.embed_dim; ++d) norm += row[d] * row[d];
        grid_map.data[static_cast<std::size_t>(t)] = std::sqrt(norm);
    }
    int side = a.image_side;
    Tensor img({side, side});
    for (int y = 0; y < side; ++y)
        for (int x2 = 0; x2 < side; ++x2)
            img.data[static_cast<std::size_t>(y * side + x2)] =
                grid_map.data[static_cast<std::size_t>((y / a.patch_size) * g + (x2 / a.patch_size))];
    return img;
}

}  // namespace detail

inline nlohmann::json method_json(const MethodOutcome& m) {
    nlohmann::json j;
    j["n"] = m.n;
    j["white_box_asr"] = m.white_box_asr;
    j["target_asr"] = m.target_asr;
    double mean_t = 0.0;
    for (const auto& [k, v] : m.target_asr) mean_t += v;
    j["mean_target_asr"] = m.target_asr.empty() ? 0.0 : mean_t / static_cast<double>(m.target_asr.size());
    j["final_confidence_mean"] = m.conf_mean;
    j["hfer_mean"] = m.hfer_mean;
    j["psnr_mean"] = m.psnr_mean;
    j["ssim_mean"] = m.ssim_mean;
    j["stabilization_mean"] = m.stab_mean;
    return j;
}

// Writes report.json, asr_matrix.csv, metrics.csv, per_image.csv, timing.csv
// and the spectrum/saliency PGM pair per method into cfg.output_dir.
inline void write_report_files(const ExperimentReport& rep, const ExperimentConfig& cfg,
                               const Model* surrogate_for_saliency = nullptr) {
    detail::ensure_dir(cfg.output_dir);
    const std::string dir = cfg.output_dir;
    const std::string hash = rep.config_hash;

    nlohmann::json j;
    j["config"] = nlohmann::json::object();
    for (const auto& [k, v] : rep.config_echo.entries()) j["config"][k] = v;
    j["config_hash"] = hash;
    j["versions"] = {{"library", kLibraryVersion}, {"report_format", kReportFormatVersion}};
    j["surrogate"] = rep.surrogate;
    j["targets"] = rep.targets;
    j["models"] = nlohmann::json::object();
    for (const auto& [name, acc] : rep.model_accuracy) j["models"][name] = {{"clean_accuracy", acc}};
    j["n"] = rep.n;
    j["white_box"] = nlohmann::json::object();
    j["transfer"] = nlohmann::json::object();
    j["metrics"] = nlohmann::json::object();
    for (const auto& m : rep.methods) {
        j["white_box"][m.method] = m.white_box_asr;
        j["transfer"][m.method] = m.target_asr;
        j["metrics"][m.method] = method_json(m);
    }
    detail::write_text_file(dir + "/report.json", j.dump(2) + "\n");

    // asr_matrix.csv — white-box row included as target == surrogate.
    {
        std::string csv = detail::csv_header_comment(hash);
        csv += "method,surrogate,target,asr_percent,n\n";
        struct RowKey {
            std::string method, target;
            double asr;
            int n;
        };
        std::vector<RowKey> rows;
        for (const auto& m : rep.methods) {
            rows.push_back({m.method, rep.surrogate, m.white_box_asr, m.n});
            for (const auto& [t, asr] : m.target_asr) rows.push_back({m.method, t, asr, m.n});
        }
        std::sort(rows.begin(), rows.end(), [](const RowKey& a, const RowKey& b) {
            return std::tie(a.method, a.target) < std::tie(b.method, b.target);
        });
        for (const auto& r : rows)
            csv += r.method + "," + rep.surrogate + "," + r.target + "," + detail::fmt4(r.asr) + "," +
                   std::to_string(r.n) + "\n";
        detail::write_text_file(dir + "/asr_matrix.csv", csv);
    }

    // metrics.csv — one summary row per method.
    {
        std::string csv = detail::csv_header_comment(hash);
        csv += "method,white_box_asr,mean_target_asr,final_confidence_mean,hfer_mean,psnr_mean,"
               "ssim_mean,stabilization_mean\n";
        for (const auto& m : rep.methods)
            csv += m.method + "," + detail::fmt4(m.white_box_asr) + "," + detail::mean_target_asr_str(m) +
                   "," + detail::fmt4(m.conf_mean) + "," + detail::fmt4(m.hfer_mean) + "," +
                   detail::fmt4(m.psnr_mean) + "," + detail::fmt4(m.ssim_mean) + "," +
                   detail::fmt4(m.stab_mean) + "\n";
        detail::write_text_file(dir + "/metrics.csv", csv);
    }

    // per_image.csv — success flags and stabilization as integers (-1 = never
    // stabilized), measured quantities at 4 decimals.
    {
        std::string csv = detail::csv_header_comment(hash);
        csv += "method,image,dataset_index,label,success,stabilization,final_conf,hfer,psnr,ssim";
        for (const auto& t : rep.targets) csv += ",success_" + t;
        csv += "\n";
        for (const auto& m : rep.methods) {
            for (const auto& r : m.rows) {
                csv += m.method + "," + std::to_string(r.image) + "," + std::to_string(r.dataset_index) +
                       "," + std::to_string(r.label) + "," + (r.success ? "1" : "0") + "," +
                       std::to_string(r.stabilization) + "," + detail::fmt4(r.final_conf) + "," +
                       detail::fmt4(r.hfer_v) + "," + detail::fmt4(r.psnr_v) + "," +
                       detail::fmt4(r.ssim_v);
                for (const auto& t : rep.targets)
                    csv += std::string(",") + (r.target_success.at(t) ? "1" : "0");
                csv += "\n";
            }
        }
        detail::write_text_file(dir + "/per_image.csv", csv);
    }

    // timing.csv — machine-dependent; deliberately outside the deterministic set.
    {
        std::string csv = detail::csv_header_comment(hash);
        csv += "method,mean_seconds,n\n";
        for (const auto& m : rep.methods)
            csv += m.method + "," + detail::fmt4(m.mean_seconds) + "," + std::to_string(m.n) + "\n";
        detail::write_text_file(dir + "/timing.csv", csv);
    }

    for (const auto& m : rep.methods) {
        if (m.first_delta.rank() == 3) {
            write_pgm(dir + "/spectrum_" + m.method + ".pgm", detail::spectrum_image(m.first_delta));
            if (surrogate_for_saliency && surrogate_for_saliency->desc.kind == ModelKind::vit)
                write_pgm(dir + "/saliency_" + m.method + ".pgm",
                          detail::saliency_image(*surrogate_for_saliency, m.first_x_adv));
        }
    }
}

inline void write_ablation_files(const std::vector<AblationRow>& rows, const ExperimentConfig& cfg) {
    detail::ensure_dir(cfg.output_dir);
    std::string hash = cfg.config_hash();
    std::string csv = detail::csv_header_comment(hash);
    csv += "subset,fsgs_attn,fsgs_qkv,fsgs_mlp,white_box_asr";
    std::vector<std::string> tnames;
    if (!rows.empty())
        for (const auto& [t, v] : rows.front().outcome.target_asr) tnames.push_back(t);
    for (const auto& t : tnames) csv += ",asr_" + t;
    csv += ",mean_target_asr\n";
    for (const auto& r : rows) {
        csv += r.subset + "," + (r.attn ? "1" : "0") + "," + (r.qkv ? "1" : "0") + "," +
               (r.mlp ? "1" : "0") + "," + detail::fmt4(r.outcome.white_box_asr);
        for (const auto& t : tnames) csv += "," + detail::fmt4(r.outcome.target_asr.at(t));
        csv += "," + detail::mean_target_asr_str(r.outcome) + "\n";
    }
    detail::write_text_file(cfg.output_dir + "/ablation.csv", csv);

    nlohmann::json j;
    j["config_hash"] = hash;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json row = method_json(r.outcome);
        row["subset"] = r.subset;
        row["fsgs_attn"] = r.attn;
        row["fsgs_qkv"] = r.qkv;
        row["fsgs_mlp"] = r.mlp;
        j["rows"].push_back(row);
    }
    detail::write_text_file(cfg.output_dir + "/ablation.json", j.dump(2) + "\n");
}

inline void write_sigma_files(const std::vector<SigmaRow>& rows, const ExperimentConfig& cfg) {
    detail::ensure_dir(cfg.output_dir);
    std::string hash = cfg.config_hash();
    std::string csv = detail::csv_header_comment(hash);
    csv += "sigma,white_box_asr";
    std::vector<std::string> tnames;
    if (!rows.empty())
        for (const auto& [t, v] : rows.front().outcome.target_asr) tnames.push_back(t);
    for (const auto& t : tnames) csv += ",asr_" + t;
    csv += ",mean_target_asr,hfer_mean\n";
    for (const auto& r : rows) {
        csv += detail::fmt4(r.sigma) + "," + detail::fmt4(r.outcome.white_box_asr);
        for (const auto& t : tnames) csv += "," + detail::fmt4(r.outcome.target_asr.at(t));
        csv += "," + detail::mean_target_asr_str(r.outcome) + "," + detail::fmt4(r.outcome.hfer_mean) + "\n";
    }
    detail::write_text_file(cfg.output_dir + "/sigma_sweep.csv", csv);

    nlohmann::json j;
    j["config_hash"] = hash;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json row = method_json(r.outcome);
        row["sigma"] = r.sigma;
        j["rows"].push_back(row);
    }
    detail::write_text_file(cfg.output_dir + "/sigma_sweep.json", j.dump(2) + "\n");
}

inline void write_theorem1_file(const AlignmentSummary& summary, const ExperimentConfig& cfg) {
    detail::ensure_dir(cfg.output_dir);
    nlohmann::json j;
    j["config_hash"] = cfg.config_hash();
    j["improved_fraction"] = summary.improved_fraction;
    j["mean_delta_cos"] = summary.mean_delta_cos;
    j["trials"] = static_cast<int>(summary.delta_cos.size());
    detail::write_text_file(cfg.output_dir + "/theorem1.json", j.dump(2) + "\n");
}

}  // namespace tesser
