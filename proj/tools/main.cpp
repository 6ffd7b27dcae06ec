#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "atomflow/bounds.hpp"
#include "atomflow/dataset.hpp"
#include "atomflow/errors.hpp"
#include "atomflow/flow.hpp"
#include "atomflow/metrics.hpp"
#include "atomflow/model.hpp"
#include "atomflow/run_config.hpp"
#include "atomflow/sampler.hpp"

using namespace atomflow;
using nlohmann::json;

namespace {

// ---- resolved-config plumbing ----------------------------------------------

ScheduleKind parse_schedule(const std::string& name) {
    if (name == "uniform") return ScheduleKind::uniform;
    if (name == "log" || name == "logarithmic") return ScheduleKind::logarithmic;
    throw ConfigError("unknown schedule '" + name + "' (uniform|log)");
}

GKind parse_g_kind(const std::string& name) {
    if (name == "zero") return GKind::zero;
    if (name == "inv_t") return GKind::inv_t;
    if (name == "inv_t2") return GKind::inv_t2;
    if (name == "one_minus_t_over_t") return GKind::one_minus_t_over_t;
    throw ConfigError("unknown g kind '" + name +
                      "' (zero|inv_t|inv_t2|one_minus_t_over_t)");
}

const char* g_kind_name(GKind kind) {
    switch (kind) {
    case GKind::zero: return "zero";
    case GKind::inv_t: return "inv_t";
    case GKind::inv_t2: return "inv_t2";
    default: return "one_minus_t_over_t";
    }
}

void model_defaults(RunConfig& rc) {
    const ModelConfig d;
    rc.set_long("hidden_size", d.hidden_size);
    rc.set_long("n_blocks", d.n_blocks);
    rc.set_long("n_heads", d.n_heads);
    rc.set_long("max_len", d.max_len);
    rc.set_bool("positional_encoding", d.use_positional_encoding);
}

ModelConfig model_config_from(const RunConfig& rc) {
    ModelConfig c;
    c.hidden_size = static_cast<int>(rc.get_long("hidden_size", c.hidden_size));
    c.n_blocks = static_cast<int>(rc.get_long("n_blocks", c.n_blocks));
    c.n_heads = static_cast<int>(rc.get_long("n_heads", c.n_heads));
    c.max_len = static_cast<int>(rc.get_long("max_len", c.max_len));
    c.use_positional_encoding =
        rc.get_bool("positional_encoding", c.use_positional_encoding);
    c.validate();
    return c;
}

void train_defaults(RunConfig& rc) {
    const TrainConfig d;
    rc.set_double("alpha", d.alpha);
    rc.set_double("lambda_discrete", d.lambda_discrete);
    rc.set_double("ema_decay", d.ema_decay);
    rc.set_long("n_rot_augs", d.n_rot_augs);
    rc.set_bool("rotate", d.rotate);
    rc.set_long("batch_size", d.batch_size);
    rc.set_double("lr", d.lr);
    rc.set_double("grad_clip", d.grad_clip);
}

TrainConfig train_config_from(const RunConfig& rc) {
    TrainConfig c;
    c.alpha = rc.get_double("alpha", c.alpha);
    c.lambda_discrete = rc.get_double("lambda_discrete", c.lambda_discrete);
    c.ema_decay = rc.get_double("ema_decay", c.ema_decay);
    c.n_rot_augs = static_cast<int>(rc.get_long("n_rot_augs", c.n_rot_augs));
    c.rotate = rc.get_bool("rotate", c.rotate);
    c.batch_size = static_cast<int>(rc.get_long("batch_size", c.batch_size));
    c.lr = rc.get_double("lr", c.lr);
    c.grad_clip = rc.get_double("grad_clip", c.grad_clip);
    c.seed = static_cast<std::uint64_t>(rc.get_long("seed", 0));
    c.validate();
    return c;
}

void sampler_defaults(RunConfig& rc) {
    const SampleConfig d;
    rc.set_long("n_steps", d.n_steps);
    rc.set("schedule", "log");
    rc.set("g_kind", g_kind_name(d.g_kind));
    rc.set_double("eps_g", d.eps_g);
    rc.set_double("gamma", d.gamma);
    rc.set_double("g_cutoff", d.g_cutoff);
    rc.set_bool("noise_literal", d.noise_literal);
    rc.set_bool("ema", false);
}

SampleConfig sample_config_from(const RunConfig& rc) {
    SampleConfig c;
    c.n_steps = static_cast<int>(rc.get_long("n_steps", c.n_steps));
    c.schedule = parse_schedule(rc.get("schedule", "log"));
    c.g_kind = parse_g_kind(rc.get("g_kind", g_kind_name(c.g_kind)));
    c.eps_g = rc.get_double("eps_g", c.eps_g);
    c.gamma = rc.get_double("gamma", c.gamma);
    c.g_cutoff = rc.get_double("g_cutoff", c.g_cutoff);
    c.noise_literal = rc.get_bool("noise_literal", c.noise_literal);
    c.guidance.enabled = rc.get_bool("guidance", false);
    c.guidance.t_guidance = rc.get_double("t_guidance", c.guidance.t_guidance);
    c.guidance.alpha_phys = rc.get_double("alpha_phys", c.guidance.alpha_phys);
    c.guidance.through_model = rc.get_bool("through_model", c.guidance.through_model);
    c.validate();
    return c;
}

// Collects only the flags the user actually passed, so they override the
// config file, which in turn overrides built-in defaults.
struct FlagSet {
    std::vector<std::function<void(RunConfig&)>> collectors;

    void add_long(CLI::App* cmd, const std::string& flag, const std::string& key,
                  const std::string& desc) {
        auto v = std::make_shared<long>();
        CLI::Option* o = cmd->add_option(flag, *v, desc);
        collectors.push_back([o, v, key](RunConfig& rc) {
            if (o->count()) rc.set_long(key, *v);
        });
    }
    void add_double(CLI::App* cmd, const std::string& flag, const std::string& key,
                    const std::string& desc) {
        auto v = std::make_shared<double>();
        CLI::Option* o = cmd->add_option(flag, *v, desc);
        collectors.push_back([o, v, key](RunConfig& rc) {
            if (o->count()) rc.set_double(key, *v);
        });
    }
    void add_string(CLI::App* cmd, const std::string& flag, const std::string& key,
                    const std::string& desc) {
        auto v = std::make_shared<std::string>();
        CLI::Option* o = cmd->add_option(flag, *v, desc);
        collectors.push_back([o, v, key](RunConfig& rc) {
            if (o->count()) rc.set(key, *v);
        });
    }
    void add_switch(CLI::App* cmd, const std::string& flag, const std::string& key,
                    bool value, const std::string& desc) {
        CLI::Option* o = cmd->add_flag(flag, desc);
        collectors.push_back([o, key, value](RunConfig& rc) {
            if (o->count()) rc.set_bool(key, value);
        });
    }

    void apply(RunConfig& rc) const {
        for (const auto& c : collectors) c(rc);
    }
};

// config file between defaults and flags; echo into the run dir when given
RunConfig resolve(RunConfig defaults, const std::string& config_path,
                  const FlagSet& flags, const std::string& run_dir) {
    if (!config_path.empty()) defaults.apply(read_run_config_file(config_path));
    flags.apply(defaults);
    if (!run_dir.empty()) {
        defaults.set("run_dir", run_dir);
        init_run_dir(run_dir, defaults);
    }
    return defaults;
}

// ---- shared pieces ----------------------------------------------------------

Corpus load_corpus(const RunConfig& rc, const char* key = "corpus") {
    const std::string path = rc.get(key, "");
    if (path.empty())
        throw ConfigError(std::string("a corpus path is required (--") + key + ")");
    Corpus corpus = read_corpus_file(path);
    if (corpus.entries.empty()) throw DataError("corpus is empty: " + path);
    return corpus;
}

std::vector<Molecule> split_or_all(const Corpus& corpus, std::string_view split) {
    std::vector<Molecule> mols = corpus.molecules(split);
    return mols.empty() ? corpus.molecules() : mols;
}

Checkpoint load_model(const RunConfig& rc) {
    const std::string path = rc.get("checkpoint", "");
    if (path.empty()) throw ConfigError("a checkpoint path is required (--checkpoint)");
    return load_checkpoint(path);
}

const ModelParams& select_weights(const Checkpoint& ck, const RunConfig& rc) {
    if (!rc.get_bool("ema", false)) return ck.params;
    if (!ck.ema) throw DataError("checkpoint carries no ema weights");
    return *ck.ema;
}

std::ostream& open_out(std::ofstream& file, const std::string& path) {
    if (path.empty()) return std::cout;
    file.open(path, std::ios::binary);
    if (!file) throw DataError("cannot open output file: " + path);
    return file;
}

void write_molecules(const std::string& path, const std::vector<Molecule>& mols,
                     const char* id_prefix, const char* split) {
    Corpus out;
    for (std::size_t i = 0; i < mols.size(); ++i) {
        CorpusEntry e;
        e.mol = mols[i];
        char id[64];
        std::snprintf(id, sizeof(id), "%s-%06zu", id_prefix, i);
        e.id = id;
        e.split = split;
        out.entries.push_back(std::move(e));
    }
    write_corpus_file(path, out);
}

void write_trajectory(const std::string& path, const Trajectory& traj) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open trajectory file: " + path);
    for (const TrajectorySnapshot& s : traj.snapshots) {
        json row;
        row["t"] = s.t;
        row["types"] = s.types;
        for (int i = 0; i < s.x.rows(); ++i) {
            row["x"].push_back({s.x(i, 0), s.x(i, 1), s.x(i, 2)});
            row["x1_hat"].push_back({s.x1_hat(i, 0), s.x1_hat(i, 1), s.x1_hat(i, 2)});
        }
        os << row.dump() << "\n";
    }
}

json report_json(const MetricsReport& report, std::size_t n) {
    json out;
    out["n"] = n;
    out["validity"] = report.validity;
    out["connectivity"] = report.connectivity;
    out["novelty"] = report.novelty;
    out["diversity"] = report.diversity;
    out["pb_rate"] = report.pb_rate;
    json checks;
    for (const char* name :
         {"bond_lengths", "angles", "clash", "flatness", "connected", "valence"})
        checks[name] = 0.0;
    if (!report.per_molecule.empty()) {
        for (const MoleculeFlags& f : report.per_molecule)
            for (const auto& [name, ok] : f.pb.named())
                if (ok) checks[name] = checks[name].get<double>() + 1.0;
        for (auto& [name, count] : checks.items())
            count = count.get<double>() / static_cast<double>(report.per_molecule.size());
    }
    out["checks"] = checks;
    return out;
}

// Draws sample sizes either from --atoms or from the size histogram of the
// corpus test split (the whole corpus when no test split exists).
std::function<int(Rng&)> size_source(const RunConfig& rc) {
    const long atoms = rc.get_long("atoms", 0);
    if (atoms > 0) return [atoms](Rng&) { return static_cast<int>(atoms); };
    const std::string path = rc.get("size_corpus", rc.get("corpus", ""));
    if (path.empty())
        throw ConfigError("sample sizes need --atoms or --size-corpus");
    const Corpus corpus = read_corpus_file(path);
    std::vector<int> sizes = corpus.sizes("test");
    if (sizes.empty()) sizes = corpus.sizes();
    if (sizes.empty()) throw DataError("corpus has no molecules: " + path);
    return [sizes](Rng& rng) { return size_sampler(sizes, rng); };
}

std::vector<Molecule> draw_samples(const ModelParams& weights, const SampleConfig& cfg,
                                   const std::function<int(Rng&)>& next_size, long count,
                                   std::uint64_t seed, Trajectory* first_trajectory,
                                   GuidanceReport* report) {
    const ModelPredictor predictor(weights);
    Rng size_rng = Rng::stream(seed, "sizes");
    std::vector<Molecule> out;
    out.reserve(count);
    for (long i = 0; i < count; ++i) {
        Rng rng = Rng::stream(seed, "sample", static_cast<std::uint64_t>(i));
        const int n_atoms = next_size(size_rng);
        Trajectory* traj = i == 0 ? first_trajectory : nullptr;
        out.push_back(sample(predictor, n_atoms, cfg, rng, traj, report));
    }
    return out;
}

// ---- commands ---------------------------------------------------------------

int cmd_gen_data(const RunConfig& rc) {
    const long n = rc.get_long("n", 0);
    if (n < 1) throw ConfigError("gen-data needs --n >= 1");
    const std::string out = rc.get("out", "");
    if (out.empty()) throw ConfigError("gen-data needs --out");
    Rng rng = Rng::stream(static_cast<std::uint64_t>(rc.get_long("seed", 0)), "data");
    const Corpus corpus = gen_synthetic(static_cast<int>(n), rng);
    write_corpus_file(out, corpus);
    std::cout << "wrote " << corpus.entries.size() << " molecules to " << out << "\n";
    return 0;
}

int cmd_train(const RunConfig& rc) {
    const Corpus corpus = load_corpus(rc);
    const ModelConfig mc = model_config_from(rc);
    const TrainConfig tc = train_config_from(rc);
    const long steps = rc.get_long("steps", 0);
    if (steps < 1) throw ConfigError("train needs --steps >= 1");

    std::string out = rc.get("out", "");
    const std::string run_dir = rc.get("run_dir", "");
    if (out.empty() && !run_dir.empty())
        out = (std::filesystem::path(run_dir) / "checkpoints" / "final.tbsc").string();
    if (out.empty()) throw ConfigError("train needs --out or --run-dir");

    std::ofstream log_file;
    std::ostream* log = &std::cout;
    if (!run_dir.empty()) {
        const auto path = std::filesystem::path(run_dir) / "logs" / "train.log";
        log_file.open(path, std::ios::binary);
        if (!log_file) throw DataError("cannot open " + path.string());
        log = &log_file;
    }

    Trainer trainer(mc, tc, split_or_all(corpus, "train"));
    trainer.run(steps, log, rc.get_long("log_every", 50));
    save_checkpoint(out, trainer.params(), &trainer.ema());
    std::cout << "trained " << steps << " steps, checkpoint at " << out << "\n";
    return 0;
}

int cmd_sample(const RunConfig& rc, bool guided) {
    const Checkpoint ck = load_model(rc);
    const ModelParams& weights = select_weights(ck, rc);
    RunConfig effective = rc;
    if (guided) effective.set_bool("guidance", true);
    const SampleConfig cfg = sample_config_from(effective);
    const long count = rc.get_long("n", 0);
    if (count < 1) throw ConfigError("sampling needs --n >= 1");
    std::string out = rc.get("out", "");
    const std::string run_dir = rc.get("run_dir", "");
    if (out.empty() && !run_dir.empty())
        out = (std::filesystem::path(run_dir) / "samples" / "samples.xyzs").string();
    if (out.empty()) throw ConfigError("sampling needs --out or --run-dir");

    const std::string traj_path = rc.get("trajectory", "");
    Trajectory trajectory;
    GuidanceReport report;
    const std::vector<Molecule> mols =
        draw_samples(weights, cfg, size_source(rc), count,
                     static_cast<std::uint64_t>(rc.get_long("seed", 0)),
                     traj_path.empty() ? nullptr : &trajectory, &report);
    write_molecules(out, mols, guided ? "guided" : "sample", "sample");
    if (!traj_path.empty()) write_trajectory(traj_path, trajectory);

    std::cout << "wrote " << mols.size() << " molecules to " << out << "\n";
    if (guided)
        std::cout << "guidance attempts " << report.attempts << ", applied "
                  << report.applied << ", skipped " << report.skipped << "\n";
    return 0;
}

int cmd_evaluate(const RunConfig& rc) {
    const std::string in = rc.get("in", "");
    if (in.empty()) throw ConfigError("evaluate needs --in");
    const Corpus samples = read_corpus_file(in);
    const std::vector<Molecule> mols = samples.molecules();
    if (mols.empty()) throw DataError("no molecules to evaluate in " + in);

    std::unordered_set<std::uint64_t> train_hashes;
    const bool with_novelty = rc.contains("train_corpus");
    if (with_novelty) {
        const Corpus train = load_corpus(rc, "train_corpus");
        train_hashes = hash_set(split_or_all(train, "train"));
    }
    const MetricsReport report = evaluate(mols, with_novelty ? &train_hashes : nullptr);

    std::ofstream file;
    std::ostream& os = open_out(file, rc.get("out", ""));
    os << report_json(report, mols.size()).dump(2) << "\n";
    return 0;
}

int cmd_equiv_error(const RunConfig& rc) {
    const Checkpoint ck = load_model(rc);
    const Corpus corpus = load_corpus(rc);
    const long index = rc.get_long("index", 0);
    const std::vector<Molecule> mols = split_or_all(corpus, "test");
    if (index < 0 || index >= static_cast<long>(mols.size()))
        throw ConfigError("--index is outside the corpus");
    const double t = rc.get_double("t", 0.5);
    const int n_rot = static_cast<int>(rc.get_long("rotations", 64));
    Rng rng = Rng::stream(static_cast<std::uint64_t>(rc.get_long("seed", 0)), "equiv");
    const ModelPredictor predictor(select_weights(ck, rc));
    const double err = equivariance_error(predictor, mols[index], t, n_rot, rng);

    json out;
    out["t"] = t;
    out["rotations"] = n_rot;
    out["equivariance_error"] = err;
    std::ofstream file;
    std::ostream& os = open_out(file, rc.get("out", ""));
    os << out.dump(2) << "\n";
    return 0;
}

int cmd_renoise(const RunConfig& rc) {
    const Checkpoint ck = load_model(rc);
    const Corpus corpus = load_corpus(rc);
    const SampleConfig cfg = sample_config_from(rc);
    std::vector<double> taus;
    std::istringstream list(rc.get("taus", "0.2,0.4,0.6,0.8"));
    std::string item;
    while (std::getline(list, item, ',')) {
        try {
            std::size_t used = 0;
            taus.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
            throw ConfigError("cannot parse renoising time '" + item + "'");
        }
    }
    const ModelPredictor predictor(select_weights(ck, rc));
    const std::vector<double> rates =
        renoise_probe(predictor, split_or_all(corpus, "test"), taus, cfg,
                      static_cast<std::uint64_t>(rc.get_long("seed", 0)));

    std::ofstream file;
    std::ostream& os = open_out(file, rc.get("out", ""));
    os << "tau,pb_rate\n";
    for (std::size_t i = 0; i < taus.size(); ++i) {
        char line[64];
        std::snprintf(line, sizeof(line), "%g,%.6f\n", taus[i], rates[i]);
        os << line;
    }
    return 0;
}

int cmd_bounds(const RunConfig& rc) {
    const Corpus corpus = load_corpus(rc, "in");
    const long index = rc.get_long("index", 0);
    if (index < 0 || index >= static_cast<long>(corpus.entries.size()))
        throw ConfigError("--index is outside the corpus");
    const Molecule& mol = corpus.entries[index].mol;
    const BondGraph g = perceive_bonds(mol);
    const GraphDistances dists = graph_distances(mol, g);
    const BoundsMatrix bm = bounds_matrix(mol, dists);
    std::ofstream file;
    std::ostream& os = open_out(file, rc.get("out", ""));
    write_bounds_csv(os, dists, bm);
    return 0;
}

struct AblateRow {
    std::string value;
    MetricsReport report;
};

int cmd_ablate(const RunConfig& rc) {
    const std::string axis = rc.get("axis", "");
    const Corpus corpus = load_corpus(rc);
    const ModelConfig mc = model_config_from(rc);
    const long train_steps = rc.get_long("train_steps", 300);
    const long n_samples = rc.get_long("samples", 64);
    if (train_steps < 1 || n_samples < 1)
        throw ConfigError("ablate needs positive --train-steps and --samples");
    const std::uint64_t seed = static_cast<std::uint64_t>(rc.get_long("seed", 0));
    const std::vector<Molecule> train_mols = split_or_all(corpus, "train");
    const std::unordered_set<std::uint64_t> train_hashes = hash_set(train_mols);

    std::vector<int> sizes = corpus.sizes("test");
    if (sizes.empty()) sizes = corpus.sizes();
    const auto next_size = [&sizes](Rng& rng) { return size_sampler(sizes, rng); };

    const auto train_once = [&](const TrainConfig& tc) {
        Trainer trainer(mc, tc, train_mols);
        trainer.run(train_steps, nullptr, train_steps);
        return trainer.params().clone();
    };
    const auto measure = [&](const ModelParams& weights, const SampleConfig& cfg) {
        const std::vector<Molecule> mols =
            draw_samples(weights, cfg, next_size, n_samples, seed, nullptr, nullptr);
        return evaluate(mols, &train_hashes);
    };

    std::vector<AblateRow> rows;
    const TrainConfig base_tc = train_config_from(rc);
    const SampleConfig base_cfg = sample_config_from(rc);

    if (axis == "alpha") {
        for (double alpha : {1.5, 1.8, 2.0}) {
            TrainConfig tc = base_tc;
            tc.alpha = alpha;
            char label[32];
            std::snprintf(label, sizeof(label), "%g", alpha);
            rows.push_back({label, measure(train_once(tc), base_cfg)});
        }
    } else if (axis == "rotation") {
        for (bool rotate : {true, false}) {
            TrainConfig tc = base_tc;
            tc.rotate = rotate;
            rows.push_back({rotate ? "on" : "off", measure(train_once(tc), base_cfg)});
        }
    } else if (axis == "g") {
        const ModelParams weights = train_once(base_tc);
        for (GKind kind : {GKind::zero, GKind::inv_t, GKind::inv_t2,
                           GKind::one_minus_t_over_t}) {
            SampleConfig cfg = base_cfg;
            cfg.g_kind = kind;
            rows.push_back({g_kind_name(kind), measure(weights, cfg)});
        }
    } else if (axis == "steps") {
        const ModelParams weights = train_once(base_tc);
        for (int steps : {10, 20, 30, 40, 50, 100, 200, 500}) {
            SampleConfig cfg = base_cfg;
            cfg.n_steps = steps;
            rows.push_back({std::to_string(steps), measure(weights, cfg)});
        }
    } else if (axis == "gamma") {
        const ModelParams weights = train_once(base_tc);
        for (double gamma : {0.0, 0.005, 0.01, 0.05, 0.1}) {
            SampleConfig cfg = base_cfg;
            cfg.gamma = gamma;
            char label[32];
            std::snprintf(label, sizeof(label), "%g", gamma);
            rows.push_back({label, measure(weights, cfg)});
        }
    } else {
        throw ConfigError("unknown ablation axis '" + axis +
                          "' (alpha|rotation|g|steps|gamma)");
    }

    std::ofstream file;
    std::ostream& os = open_out(file, rc.get("out", ""));
    os << "axis,value,validity,connectivity,pb_rate,diversity,novelty\n";
    for (const AblateRow& row : rows) {
        char line[256];
        std::snprintf(line, sizeof(line), "%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                      axis.c_str(), row.value.c_str(), row.report.validity,
                      row.report.connectivity, row.report.pb_rate, row.report.diversity,
                      row.report.novelty);
        os << line;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale molecular flow-matching toolkit"};
    app.require_subcommand(1);
    FlagSet flags;

    struct Command {
        CLI::App* cmd = nullptr;
        RunConfig defaults;
        std::string config_path;
        std::string run_dir;
        std::function<int(const RunConfig&)> run;
    };
    std::vector<std::unique_ptr<Command>> commands;

    const auto make = [&](const std::string& name, const std::string& desc,
                          std::function<int(const RunConfig&)> run) -> Command& {
        auto c = std::make_unique<Command>();
        c->cmd = app.add_subcommand(name, desc);
        c->run = std::move(run);
        c->cmd->add_option("--config", c->config_path, "key = value settings file");
        c->cmd->add_option("--run-dir", c->run_dir, "run directory for outputs and logs");
        c->defaults.set_long("seed", 0);
        flags.add_long(c->cmd, "--seed", "seed", "master seed for all sub-streams");
        commands.push_back(std::move(c));
        return *commands.back();
    };
    const auto add_model_flags = [&](Command& c) {
        model_defaults(c.defaults);
        flags.add_long(c.cmd, "--hidden-size", "hidden_size", "transformer width");
        flags.add_long(c.cmd, "--blocks", "n_blocks", "transformer depth");
        flags.add_long(c.cmd, "--heads", "n_heads", "attention heads");
        flags.add_long(c.cmd, "--max-len", "max_len", "maximum atom count");
        flags.add_switch(c.cmd, "--no-positional-encoding", "positional_encoding", false,
                         "disable sequence position features");
    };
    const auto add_train_flags = [&](Command& c) {
        train_defaults(c.defaults);
        flags.add_double(c.cmd, "--alpha", "alpha", "time-sampling shape");
        flags.add_double(c.cmd, "--lambda", "lambda_discrete", "type loss weight");
        flags.add_double(c.cmd, "--ema-decay", "ema_decay", "shadow decay");
        flags.add_long(c.cmd, "--augs", "n_rot_augs", "rotated copies per molecule");
        flags.add_switch(c.cmd, "--no-rotate", "rotate", false, "disable rotations");
        flags.add_long(c.cmd, "--batch-size", "batch_size", "molecules per step");
        flags.add_double(c.cmd, "--lr", "lr", "learning rate");
        flags.add_double(c.cmd, "--grad-clip", "grad_clip", "global norm cap");
    };
    const auto add_sampler_flags = [&](Command& c) {
        sampler_defaults(c.defaults);
        flags.add_long(c.cmd, "--steps", "n_steps", "integration steps");
        flags.add_string(c.cmd, "--schedule", "schedule", "uniform|log");
        flags.add_string(c.cmd, "--g", "g_kind", "stochasticity kind");
        flags.add_double(c.cmd, "--eps-g", "eps_g", "divergence guard");
        flags.add_double(c.cmd, "--gamma", "gamma", "noise scale");
        flags.add_double(c.cmd, "--g-cutoff", "g_cutoff", "time beyond which g = 0");
        flags.add_switch(c.cmd, "--noise-literal", "noise_literal", true,
                         "scale the noise draw by dt instead of sqrt(dt)");
        flags.add_switch(c.cmd, "--ema", "ema", true, "sample with the ema weights");
        flags.add_string(c.cmd, "--checkpoint", "checkpoint", "weights file");
    };
    const auto add_size_flags = [&](Command& c) {
        flags.add_long(c.cmd, "--n", "n", "number of molecules");
        flags.add_long(c.cmd, "--atoms", "atoms", "fixed atom count");
        flags.add_string(c.cmd, "--size-corpus", "size_corpus",
                         "corpus whose test-split sizes are sampled");
        flags.add_string(c.cmd, "--out", "out", "output file");
    };

    {
        Command& c = make("gen-data", "generate a synthetic corpus", cmd_gen_data);
        flags.add_long(c.cmd, "--n", "n", "number of molecules");
        flags.add_string(c.cmd, "--out", "out", "corpus output path");
    }
    {
        Command& c = make("train", "fit a model on a corpus", cmd_train);
        add_model_flags(c);
        add_train_flags(c);
        flags.add_string(c.cmd, "--corpus", "corpus", "training corpus");
        flags.add_long(c.cmd, "--steps", "steps", "optimization steps");
        flags.add_string(c.cmd, "--out", "out", "checkpoint output path");
        flags.add_long(c.cmd, "--log-every", "log_every", "steps between log lines");
    }
    {
        Command& c = make("sample", "draw molecules from a checkpoint",
                          [](const RunConfig& rc) { return cmd_sample(rc, false); });
        add_sampler_flags(c);
        add_size_flags(c);
        flags.add_string(c.cmd, "--trajectory", "trajectory",
                         "write the first molecule's trajectory (json lines)");
    }
    {
        Command& c = make("guide", "sample with distance-bounds guidance",
                          [](const RunConfig& rc) { return cmd_sample(rc, true); });
        add_sampler_flags(c);
        add_size_flags(c);
        flags.add_double(c.cmd, "--t-guidance", "t_guidance", "earliest guidance time");
        flags.add_double(c.cmd, "--alpha-phys", "alpha_phys", "sign-step size");
        flags.add_switch(c.cmd, "--direct-grad", "through_model", false,
                         "differentiate the decoded coordinates directly");
    }
    {
        Command& c = make("evaluate", "score a sample file", cmd_evaluate);
        flags.add_string(c.cmd, "--in", "in", "molecules to score");
        flags.add_string(c.cmd, "--train-corpus", "train_corpus",
                         "reference corpus for novelty");
        flags.add_string(c.cmd, "--out", "out", "metrics json (stdout when omitted)");
    }
    {
        Command& c = make("equiv-error", "rotation-consistency of a checkpoint",
                          cmd_equiv_error);
        flags.add_string(c.cmd, "--checkpoint", "checkpoint", "weights file");
        flags.add_string(c.cmd, "--corpus", "corpus", "probe molecules");
        flags.add_long(c.cmd, "--index", "index", "molecule row in the test split");
        flags.add_double(c.cmd, "--t", "t", "probe time");
        flags.add_long(c.cmd, "--rotations", "rotations", "rotation count");
        flags.add_switch(c.cmd, "--ema", "ema", true, "probe the ema weights");
        flags.add_string(c.cmd, "--out", "out", "json output (stdout when omitted)");
    }
    {
        Command& c = make("renoise", "plausibility after partial renoising", cmd_renoise);
        add_sampler_flags(c);
        flags.add_string(c.cmd, "--corpus", "corpus", "test molecules");
        flags.add_string(c.cmd, "--taus", "taus", "comma-separated renoising times");
        flags.add_string(c.cmd, "--out", "out", "csv output (stdout when omitted)");
    }
    {
        Command& c = make("bounds", "distance bounds of one molecule", cmd_bounds);
        flags.add_string(c.cmd, "--in", "in", "corpus file");
        flags.add_long(c.cmd, "--index", "index", "molecule row");
        flags.add_string(c.cmd, "--out", "out", "csv output (stdout when omitted)");
    }
    {
        Command& c = make("ablate", "sweep one axis and score each point", cmd_ablate);
        add_model_flags(c);
        add_train_flags(c);
        sampler_defaults(c.defaults);
        flags.add_long(c.cmd, "--steps", "n_steps", "integration steps");
        flags.add_string(c.cmd, "--schedule", "schedule", "uniform|log");
        flags.add_string(c.cmd, "--g", "g_kind", "stochasticity kind");
        flags.add_double(c.cmd, "--gamma", "gamma", "noise scale");
        flags.add_string(c.cmd, "--axis", "axis", "alpha|rotation|g|steps|gamma");
        flags.add_string(c.cmd, "--corpus", "corpus", "train/test corpus");
        flags.add_long(c.cmd, "--train-steps", "train_steps", "training steps per point");
        flags.add_long(c.cmd, "--samples", "samples", "molecules scored per point");
        flags.add_string(c.cmd, "--out", "out", "csv output (stdout when omitted)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        for (const auto& c : commands)
            if (c->cmd->parsed())
                return c->run(resolve(c->defaults, c->config_path, flags, c->run_dir));
        throw ConfigError("no command selected");
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 4;
    }
}
