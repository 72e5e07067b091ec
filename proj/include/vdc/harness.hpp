#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "codec.hpp"
#include "condgen.hpp"
#include "correction.hpp"
#include "gmm.hpp"
#include "optimize.hpp"
#include "steering.hpp"
#include "tasks.hpp"
#include "toy_denoiser.hpp"
#include "vdct.hpp"

namespace vdc {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Run configuration. JSON with a strict schema: unknown keys anywhere are
// rejected so a sweep typo cannot silently fall back to a default.

struct WorldSpec {
    // either explicit components ...
    std::vector<MixtureComponent> components;
    // ... or a generated family: means = mean_scale * unit + jitter * noise
    std::size_t n_components = 2;
    std::size_t d_z = 8;
    double mean_scale = 2.5;
    double jitter = 0.4;
    double sigma = 0.3;
    unsigned long seed = 5;
    bool generated = true;
};

struct CodecSpec {
    std::size_t d_z = 8;
    std::size_t d_x = 16;
    unsigned long seed = 7;
};

struct ScheduleSpec {
    int t_train = 1000;
    double beta_min = 1e-4;
    double beta_max = 2e-2;
    int k = 100;
};

struct EditSpec {
    std::size_t n_inputs = 100;
    unsigned long seed = 101;
    bool baseline = false;  // score the zero stack instead of a trained one
};

struct SweepAxes {
    std::vector<double> p_fraction;
    std::vector<double> s;
    std::vector<int> k;
    std::vector<std::size_t> n_examples;
    std::vector<StackSetup> cg_setup;

    bool empty() const {
        return p_fraction.empty() && s.empty() && k.empty() && n_examples.empty() &&
               cg_setup.empty();
    }
};

struct RunConfig {
    TaskKind task = TaskKind::shift;
    TaskParams task_params;
    WorldSpec world;
    CodecSpec codec;
    ScheduleSpec schedule;
    ToyDenoiserConfig denoiser;
    StackConfig stack;  // p is derived from optimizer.p_fraction and schedule.k
    OptimizerConfig optimizer;
    std::vector<AugOp> aug_ops;
    bool aug_overridden = false;
    std::size_t n_examples = 1;
    unsigned long example_seed = 23;
    double calibration_ceiling = 0.05;
    EditSpec edit;
    SweepAxes sweep;
    std::vector<unsigned long> seeds{17, 23, 42};
    std::string out_dir = "out";
};

inline std::vector<AugOp> default_augmentations(TaskKind task) {
    switch (task) {
        case TaskKind::shift: return {AugOp::flip, AugOp::permute};
        case TaskKind::pattern_add: return {AugOp::flip};
        case TaskKind::subspace_collapse: return {AugOp::gain};
    }
    return {};
}

namespace detail {

inline void require_keys(const json& obj, const std::string& where,
                         const std::vector<std::string>& allowed) {
    if (!obj.is_object()) throw ValueError("config: " + where + " must be a JSON object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            throw ValueError("config: unknown key '" + it.key() + "' in " + where);
    }
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    return obj.at(key).get<T>();
}

}  // namespace detail

inline WorldSpec parse_world(const json& j) {
    WorldSpec w;
    if (j.contains("components")) {
        detail::require_keys(j, "world", {"components"});
        w.generated = false;
        for (const auto& c : j.at("components")) {
            detail::require_keys(c, "world.components[]", {"weight", "mean", "sigma"});
            MixtureComponent mc;
            mc.weight = c.at("weight").get<double>();
            mc.mean = c.at("mean").get<std::vector<double>>();
            mc.sigma = c.at("sigma").get<double>();
            w.components.push_back(std::move(mc));
        }
        if (w.components.empty()) throw ValueError("config: world.components is empty");
        w.d_z = w.components.front().mean.size();
        return w;
    }
    detail::require_keys(j, "world",
                         {"n_components", "d_z", "mean_scale", "jitter", "sigma", "seed"});
    w.n_components = detail::get_or<std::size_t>(j, "n_components", w.n_components);
    w.d_z = detail::get_or<std::size_t>(j, "d_z", w.d_z);
    w.mean_scale = detail::get_or<double>(j, "mean_scale", w.mean_scale);
    w.jitter = detail::get_or<double>(j, "jitter", w.jitter);
    w.sigma = detail::get_or<double>(j, "sigma", w.sigma);
    w.seed = detail::get_or<unsigned long>(j, "seed", w.seed);
    return w;
}

inline RunConfig parse_config(const json& j) {
    detail::require_keys(j, "config",
                         {"task", "task_params", "world", "codec", "schedule", "denoiser",
                          "stack", "optimizer", "correction", "augmentation", "n_examples",
                          "example_seed", "calibration_ceiling", "edit", "sweep", "seeds",
                          "out_dir"});
    RunConfig c;
    if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
    if (j.contains("task_params")) {
        const auto& t = j.at("task_params");
        detail::require_keys(t, "task_params",
                             {"shift_magnitude", "pattern_amplitude", "pattern_frequency"});
        c.task_params.shift_magnitude =
            detail::get_or<double>(t, "shift_magnitude", c.task_params.shift_magnitude);
        c.task_params.pattern_amplitude =
            detail::get_or<double>(t, "pattern_amplitude", c.task_params.pattern_amplitude);
        c.task_params.pattern_frequency =
            detail::get_or<int>(t, "pattern_frequency", c.task_params.pattern_frequency);
    }
    if (j.contains("world")) c.world = parse_world(j.at("world"));
    if (j.contains("codec")) {
        const auto& t = j.at("codec");
        detail::require_keys(t, "codec", {"d_z", "d_x", "seed"});
        c.codec.d_z = detail::get_or<std::size_t>(t, "d_z", c.codec.d_z);
        c.codec.d_x = detail::get_or<std::size_t>(t, "d_x", c.codec.d_x);
        c.codec.seed = detail::get_or<unsigned long>(t, "seed", c.codec.seed);
    }
    if (j.contains("schedule")) {
        const auto& t = j.at("schedule");
        detail::require_keys(t, "schedule", {"t_train", "beta_min", "beta_max", "k"});
        c.schedule.t_train = detail::get_or<int>(t, "t_train", c.schedule.t_train);
        c.schedule.beta_min = detail::get_or<double>(t, "beta_min", c.schedule.beta_min);
        c.schedule.beta_max = detail::get_or<double>(t, "beta_max", c.schedule.beta_max);
        c.schedule.k = detail::get_or<int>(t, "k", c.schedule.k);
    }
    if (j.contains("denoiser")) {
        const auto& t = j.at("denoiser");
        detail::require_keys(t, "denoiser",
                             {"hidden", "time_dim", "d_pool", "train_steps", "batch", "lr",
                              "dropout_prob", "seed", "n_tokens", "d_c"});
        auto& d = c.denoiser;
        d.hidden = detail::get_or<std::size_t>(t, "hidden", d.hidden);
        d.time_dim = detail::get_or<std::size_t>(t, "time_dim", d.time_dim);
        d.d_pool = detail::get_or<std::size_t>(t, "d_pool", d.d_pool);
        d.train_steps = detail::get_or<long>(t, "train_steps", d.train_steps);
        d.batch = detail::get_or<std::size_t>(t, "batch", d.batch);
        d.lr = detail::get_or<double>(t, "lr", d.lr);
        d.dropout_prob = detail::get_or<double>(t, "dropout_prob", d.dropout_prob);
        d.seed = detail::get_or<unsigned long>(t, "seed", d.seed);
        d.n_tokens = detail::get_or<std::size_t>(t, "n_tokens", d.n_tokens);
        d.d_c = detail::get_or<std::size_t>(t, "d_c", d.d_c);
    }
    if (j.contains("stack")) {
        const auto& t = j.at("stack");
        detail::require_keys(t, "stack", {"setup", "n_tokens", "d_c", "hidden", "n_freq"});
        if (t.contains("setup")) c.stack.setup = parse_setup(t.at("setup").get<std::string>());
        c.stack.n_tokens = detail::get_or<std::size_t>(t, "n_tokens", c.stack.n_tokens);
        c.stack.d_c = detail::get_or<std::size_t>(t, "d_c", c.stack.d_c);
        c.stack.hidden = detail::get_or<std::size_t>(t, "hidden", c.stack.hidden);
        c.stack.n_freq = detail::get_or<std::size_t>(t, "n_freq", c.stack.n_freq);
    }
    if (j.contains("optimizer")) {
        const auto& t = j.at("optimizer");
        detail::require_keys(t, "optimizer",
                             {"iterations", "batch_size", "p_fraction", "s", "direction",
                              "lr_max", "lr_min", "latent_weight", "pixel_weight",
                              "use_augmentation", "use_pixel_loss", "use_steering",
                              "correct_inversions"});
        auto& o = c.optimizer;
        o.iterations = detail::get_or<long>(t, "iterations", o.iterations);
        o.batch_size = detail::get_or<std::size_t>(t, "batch_size", o.batch_size);
        o.p_fraction = detail::get_or<double>(t, "p_fraction", o.p_fraction);
        o.steering.s = detail::get_or<double>(t, "s", o.steering.s);
        if (t.contains("direction"))
            o.steering.direction = parse_direction(t.at("direction").get<std::string>());
        o.lr.lr_max = detail::get_or<double>(t, "lr_max", o.lr.lr_max);
        o.lr.lr_min = detail::get_or<double>(t, "lr_min", o.lr.lr_min);
        o.latent_weight = detail::get_or<double>(t, "latent_weight", o.latent_weight);
        o.pixel_weight = detail::get_or<double>(t, "pixel_weight", o.pixel_weight);
        o.use_augmentation = detail::get_or<bool>(t, "use_augmentation", o.use_augmentation);
        o.use_pixel_loss = detail::get_or<bool>(t, "use_pixel_loss", o.use_pixel_loss);
        o.use_steering = detail::get_or<bool>(t, "use_steering", o.use_steering);
        o.correct_inversions =
            detail::get_or<bool>(t, "correct_inversions", o.correct_inversions);
    }
    if (j.contains("correction")) {
        const auto& t = j.at("correction");
        detail::require_keys(t, "correction", {"iterations", "lr", "keep_best"});
        auto& r = c.optimizer.correction;
        r.iterations = detail::get_or<long>(t, "iterations", r.iterations);
        r.lr = detail::get_or<double>(t, "lr", r.lr);
        r.keep_best = detail::get_or<bool>(t, "keep_best", r.keep_best);
    }
    if (j.contains("augmentation")) {
        const auto& t = j.at("augmentation");
        detail::require_keys(t, "augmentation", {"ops"});
        c.aug_overridden = true;
        for (const auto& s : t.at("ops")) c.aug_ops.push_back(parse_aug(s.get<std::string>()));
    }
    c.n_examples = detail::get_or<std::size_t>(j, "n_examples", c.n_examples);
    c.example_seed = detail::get_or<unsigned long>(j, "example_seed", c.example_seed);
    c.calibration_ceiling =
        detail::get_or<double>(j, "calibration_ceiling", c.calibration_ceiling);
    if (j.contains("edit")) {
        const auto& t = j.at("edit");
        detail::require_keys(t, "edit", {"n_inputs", "seed", "baseline"});
        c.edit.n_inputs = detail::get_or<std::size_t>(t, "n_inputs", c.edit.n_inputs);
        c.edit.seed = detail::get_or<unsigned long>(t, "seed", c.edit.seed);
        c.edit.baseline = detail::get_or<bool>(t, "baseline", c.edit.baseline);
    }
    if (j.contains("sweep")) {
        const auto& t = j.at("sweep");
        detail::require_keys(t, "sweep", {"p_fraction", "s", "k", "n_examples", "cg_setup"});
        if (t.contains("p_fraction"))
            c.sweep.p_fraction = t.at("p_fraction").get<std::vector<double>>();
        if (t.contains("s")) c.sweep.s = t.at("s").get<std::vector<double>>();
        if (t.contains("k")) c.sweep.k = t.at("k").get<std::vector<int>>();
        if (t.contains("n_examples"))
            c.sweep.n_examples = t.at("n_examples").get<std::vector<std::size_t>>();
        if (t.contains("cg_setup"))
            for (const auto& s : t.at("cg_setup"))
                c.sweep.cg_setup.push_back(parse_setup(s.get<std::string>()));
    }
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<unsigned long>>();
    if (c.seeds.empty()) throw ValueError("config: seeds must be nonempty");
    c.out_dir = detail::get_or<std::string>(j, "out_dir", c.out_dir);
    if (!c.aug_overridden) c.aug_ops = default_augmentations(c.task);
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ValueError("config: cannot open " + path);
    json j;
    try {
        is >> j;
    } catch (const json::parse_error& e) {
        throw ValueError("config: " + path + " is not valid JSON: " + e.what());
    }
    return parse_config(j);
}

// ---------------------------------------------------------------------------
// World construction and shared run state.

inline GaussianMixtureWorld build_world(const WorldSpec& spec) {
    GaussianMixtureWorld w;
    if (!spec.generated) {
        w.components = spec.components;
        w.validate();
        return w;
    }
    if (spec.n_components == 0) throw ValueError("build_world: need at least one component");
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> g(0.0, 1.0);
    for (std::size_t k = 0; k < spec.n_components; ++k) {
        MixtureComponent c;
        c.weight = 1.0 / static_cast<double>(spec.n_components);
        c.sigma = spec.sigma;
        std::vector<double> dir(spec.d_z);
        double norm = 0.0;
        for (auto& v : dir) {
            v = g(rng);
            norm += v * v;
        }
        norm = std::sqrt(norm);
        c.mean.resize(spec.d_z);
        for (std::size_t i = 0; i < spec.d_z; ++i)
            c.mean[i] = spec.mean_scale * dir[i] / norm + spec.jitter * g(rng);
        w.components.push_back(std::move(c));
    }
    w.validate();
    return w;
}

/// Everything a command needs that is derived purely from the config.
struct RunContext {
    GaussianMixtureWorld world;
    NoiseSchedule sched;
    ToyCodec codec;
    EditTask task;
    AugmentationPolicy policy;
};

inline RunContext make_context(const RunConfig& cfg) {
    RunContext ctx{build_world(cfg.world),
                   make_schedule(cfg.schedule.t_train, cfg.schedule.beta_min,
                                 cfg.schedule.beta_max, cfg.schedule.k),
                   make_codec(cfg.codec.d_z, cfg.codec.d_x, cfg.codec.seed),
                   {},
                   {}};
    if (ctx.world.dim() != ctx.codec.d_z)
        throw ValueError("config: world dimension " + std::to_string(ctx.world.dim()) +
                         " does not match codec d_z " + std::to_string(ctx.codec.d_z));
    ctx.task = make_edit_task(cfg.task, ctx.world, ctx.codec, cfg.task_params);
    ctx.policy = make_policy(cfg.aug_ops, ctx.codec.d_x, 9);
    validate_policy(ctx.task, ctx.policy);
    return ctx;
}

// ---------------------------------------------------------------------------
// Artifact plumbing: text/CSV writers, content hashes, manifests, bundles.

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("write_text: cannot open " + path.string());
    os << text;
}

inline void write_json(const fs::path& path, const json& j) {
    write_text(path, j.dump(2) + "\n");
}

inline json read_json(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("read_json: cannot open " + path.string());
    json j;
    is >> j;
    return j;
}

inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string file_hash(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("file_hash: cannot open " + path.string());
    std::ostringstream os;
    os << is.rdbuf();
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(os.str())));
    return buf;
}

/// Hash every regular file below `dir` (except the manifest itself) into
/// manifest.json, with timing kept out of the hashed artifacts.
inline void write_manifest(const fs::path& dir, double wall_clock_seconds) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() != "manifest.json")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    json m;
    m["wall_clock_seconds"] = wall_clock_seconds;
    m["files"] = json::object();
    for (const auto& f : files)
        m["files"][fs::relative(f, dir).generic_string()] = file_hash(f);
    write_json(dir / "manifest.json", m);
}

inline std::string sanitize_name(std::string name) {
    for (auto& c : name)
        if (c == '/') c = '_';
    return name;
}

inline void save_params(const fs::path& dir, const ParamSet& params) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < params.names.size(); ++i)
        save_vdct((dir / (sanitize_name(params.names[i]) + ".vdct")).string(),
                  params.values[i]);
}

inline void load_params(const fs::path& dir, ParamSet& params) {
    for (std::size_t i = 0; i < params.names.size(); ++i) {
        Tensor t = load_vdct((dir / (sanitize_name(params.names[i]) + ".vdct")).string());
        if (t.shape != params.values[i].shape)
            throw IoError("load_params: shape mismatch for " + params.names[i]);
        params.values[i] = std::move(t);
    }
}

inline void save_denoiser_bundle(const fs::path& dir, const ToyDenoiser& model) {
    fs::create_directories(dir);
    json j;
    j["d_z"] = model.cfg.d_z;
    j["n_tokens"] = model.cfg.n_tokens;
    j["d_c"] = model.cfg.d_c;
    j["hidden"] = model.cfg.hidden;
    j["time_dim"] = model.cfg.time_dim;
    j["d_pool"] = model.cfg.d_pool;
    j["train_steps"] = model.cfg.train_steps;
    j["batch"] = model.cfg.batch;
    j["lr"] = model.cfg.lr;
    j["dropout_prob"] = model.cfg.dropout_prob;
    j["seed"] = model.cfg.seed;
    j["t_train"] = model.T_train;
    j["n_components"] = model.class_conditions.size();
    write_json(dir / "denoiser.json", j);
    save_params(dir / "params", model.params);
    for (std::size_t k = 0; k < model.class_conditions.size(); ++k)
        save_vdct((dir / ("class_cond_" + std::to_string(k) + ".vdct")).string(),
                  model.class_conditions[k]);
}

inline ToyDenoiser load_denoiser_bundle(const fs::path& dir) {
    json j = read_json(dir / "denoiser.json");
    ToyDenoiserConfig cfg;
    cfg.d_z = j.at("d_z").get<std::size_t>();
    cfg.n_tokens = j.at("n_tokens").get<std::size_t>();
    cfg.d_c = j.at("d_c").get<std::size_t>();
    cfg.hidden = j.at("hidden").get<std::size_t>();
    cfg.time_dim = j.at("time_dim").get<std::size_t>();
    cfg.d_pool = j.at("d_pool").get<std::size_t>();
    cfg.train_steps = j.at("train_steps").get<long>();
    cfg.batch = j.at("batch").get<std::size_t>();
    cfg.lr = j.at("lr").get<double>();
    cfg.dropout_prob = j.at("dropout_prob").get<double>();
    cfg.seed = j.at("seed").get<unsigned long>();
    std::mt19937_64 rng(cfg.seed);
    auto n_components = j.at("n_components").get<std::size_t>();
    auto model = ToyDenoiser::init(cfg, j.at("t_train").get<int>(), n_components, rng);
    load_params(dir / "params", model.params);
    for (std::size_t k = 0; k < n_components; ++k)
        model.class_conditions[k] =
            load_vdct((dir / ("class_cond_" + std::to_string(k) + ".vdct")).string());
    return model;
}

inline void save_stack_bundle(const fs::path& dir, const ConditionStack& stack) {
    fs::create_directories(dir);
    json j;
    j["setup"] = setup_name(stack.cfg.setup);
    j["p"] = stack.cfg.p;
    j["n_tokens"] = stack.cfg.n_tokens;
    j["d_c"] = stack.cfg.d_c;
    j["hidden"] = stack.cfg.hidden;
    j["n_freq"] = stack.cfg.n_freq;
    j["seed"] = stack.seed;
    write_json(dir / "stack.json", j);
    save_params(dir / "params", stack.params);
}

inline ConditionStack load_stack_bundle(const fs::path& dir) {
    json j = read_json(dir / "stack.json");
    StackConfig cfg;
    cfg.setup = parse_setup(j.at("setup").get<std::string>());
    cfg.p = j.at("p").get<int>();
    cfg.n_tokens = j.at("n_tokens").get<std::size_t>();
    cfg.d_c = j.at("d_c").get<std::size_t>();
    cfg.hidden = j.at("hidden").get<std::size_t>();
    cfg.n_freq = j.at("n_freq").get<std::size_t>();
    auto stack = init_stack(cfg, j.at("seed").get<unsigned long>());
    load_params(dir / "params", stack.params);
    return stack;
}

inline int worker_threads() {
    const char* env = std::getenv("VDC_LAB_THREADS");
    if (!env) return 1;
    int n = std::atoi(env);
    return n < 1 ? 1 : n;
}

}  // namespace vdc
