#include "pwlock/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "pwlock/util.hpp"

namespace pwlock {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace

std::vector<CurvePoint> assemble_curve(const std::vector<ElicitTrace>& traces,
                                       const std::string& select_by) {
    if (traces.empty()) throw std::invalid_argument("assemble_curve: no traces");
    const std::string method = traces[0].method;

    // trace -> x -> epoch -> condition -> correctness
    using EpochMap = std::map<long, std::map<std::string, double>>;
    std::vector<std::map<long, EpochMap>> grids;
    std::set<std::tuple<long, long, std::string>> grid_keys;
    for (size_t ti = 0; ti < traces.size(); ++ti) {
        if (traces[ti].method != method) {
            throw std::invalid_argument("assemble_curve: traces mix methods");
        }
        std::map<long, EpochMap> g;
        std::set<std::tuple<long, long, std::string>> keys;
        for (const auto& r : traces[ti].records) {
            g[r.samples_or_k][r.epoch_or_iter][r.condition] = r.correctness;
            keys.insert({r.samples_or_k, r.epoch_or_iter, r.condition});
        }
        if (ti == 0) {
            grid_keys = keys;
        } else if (keys != grid_keys) {
            throw std::invalid_argument("assemble_curve: traces have mismatched x grids");
        }
        grids.push_back(std::move(g));
    }

    std::vector<CurvePoint> out;
    for (const auto& [x, epochs0] : grids[0]) {
        // Pick the epoch with the best mean select_by correctness.
        long best_epoch = epochs0.begin()->first;
        double best_mean = -1.0;
        for (const auto& [epoch, conds] : epochs0) {
            const std::string sel = conds.contains(select_by) ? select_by : conds.begin()->first;
            double sum = 0;
            for (const auto& g : grids) sum += g.at(x).at(epoch).at(sel);
            const double mean = sum / static_cast<double>(grids.size());
            if (mean > best_mean) {
                best_mean = mean;
                best_epoch = epoch;
            }
        }
        for (const auto& [condition, unused] : epochs0.at(best_epoch)) {
            (void)unused;
            std::vector<double> vals;
            for (const auto& g : grids) vals.push_back(g.at(x).at(best_epoch).at(condition));
            const double n = static_cast<double>(vals.size());
            double mean = 0;
            for (double v : vals) mean += v;
            mean /= n;
            double sem = 0;
            const auto [lo, hi] = std::minmax_element(vals.begin(), vals.end());
            if (vals.size() > 1 && *lo != *hi) {
                double ss = 0;
                for (double v : vals) ss += (v - mean) * (v - mean);
                sem = std::sqrt(ss / (n - 1)) / std::sqrt(n);
            }
            out.push_back({static_cast<double>(x), mean, sem, condition, method});
        }
    }
    std::sort(out.begin(), out.end(), [](const CurvePoint& a, const CurvePoint& b) {
        if (a.condition != b.condition) return a.condition < b.condition;
        return a.x < b.x;
    });
    return out;
}

std::string trace_to_csv(const std::string& experiment_id, const ElicitTrace& trace) {
    std::string out =
        "experiment_id,method,seed,samples_or_k,epoch_or_iter,condition,correctness,"
        "checkpoint_hash,event\n";
    for (const auto& r : trace.records) {
        out += experiment_id + ',' + r.method + ',' + std::to_string(r.seed) + ',' +
               std::to_string(r.samples_or_k) + ',' + std::to_string(r.epoch_or_iter) + ',' +
               r.condition + ',' + fmt(r.correctness) + ',' + r.checkpoint_hash + ',' + r.event +
               '\n';
    }
    return out;
}

void write_trace_csv(const std::string& path, const std::string& experiment_id,
                     const ElicitTrace& trace) {
    write_file_atomic(path, trace_to_csv(experiment_id, trace));
}

ElicitTrace read_trace_csv(const std::string& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty trace csv: " + path);
    ElicitTrace trace;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::istringstream ls(line);
        std::string col;
        while (std::getline(ls, col, ',')) cols.push_back(col);
        while (cols.size() < 9) cols.emplace_back();
        TraceRecord r;
        trace.experiment_id = cols[0];
        r.method = cols[1];
        r.seed = std::stoull(cols[2]);
        r.samples_or_k = std::stol(cols[3]);
        r.epoch_or_iter = std::stol(cols[4]);
        r.condition = cols[5];
        r.correctness = std::stod(cols[6]);
        r.checkpoint_hash = cols[7];
        r.event = cols[8];
        trace.records.push_back(std::move(r));
    }
    if (!trace.records.empty()) {
        trace.method = trace.records[0].method;
        trace.seed = trace.records[0].seed;
    }
    return trace;
}

std::string curves_to_csv(const std::vector<CurvePoint>& curves) {
    std::string out = "x,mean,sem,condition,method\n";
    for (const auto& c : curves) {
        out += fmt(c.x) + ',' + fmt(c.mean) + ',' + fmt(c.sem) + ',' + c.condition + ',' +
               c.method + '\n';
    }
    return out;
}

void write_curves_csv(const std::string& path, const std::vector<CurvePoint>& curves) {
    write_file_atomic(path, curves_to_csv(curves));
}

double samples_to_threshold(const std::vector<CurvePoint>& curves, const std::string& condition,
                            double threshold) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& c : curves) {
        if (c.condition == condition) pts.emplace_back(c.x, c.mean);
    }
    std::sort(pts.begin(), pts.end());
    for (size_t i = 0; i < pts.size(); ++i) {
        if (pts[i].second >= threshold) {
            if (i == 0) return pts[0].first;
            const auto [x0, y0] = pts[i - 1];
            const auto [x1, y1] = pts[i];
            if (y1 == y0) return x1;
            return x0 + (threshold - y0) * (x1 - x0) / (y1 - y0);
        }
    }
    return -1.0;
}

void emit_plot(const std::vector<CurvePoint>& curves, const std::string& output_path) {
    if (curves.empty()) throw std::invalid_argument("emit_plot: no curves");
    std::vector<CurvePoint> pts;
    for (const auto& c : curves) {
        if (c.condition.empty()) {
            std::fprintf(stderr, "emit_plot: dropping point with empty condition\n");
            continue;
        }
        pts.push_back(c);
    }
    if (pts.empty()) throw std::invalid_argument("emit_plot: all points lacked a condition");

    const double width = 760, height = 500;
    const double ml = 70, mr = 180, mt = 30, mb = 55;
    double xmin = pts[0].x, xmax = pts[0].x;
    for (const auto& p : pts) {
        xmin = std::min(xmin, p.x);
        xmax = std::max(xmax, p.x);
    }
    if (xmax == xmin) xmax = xmin + 1;
    auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr); };
    auto sy = [&](double y) { return height - mb - y * (height - mt - mb); };

    static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

    std::map<std::pair<std::string, std::string>, std::vector<CurvePoint>> series;
    for (const auto& p : pts) series[{p.method, p.condition}].push_back(p);

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    // axes
    svg << "<line x1=\"" << ml << "\" y1=\"" << sy(0) << "\" x2=\"" << width - mr << "\" y2=\""
        << sy(0) << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << sy(0) << "\" x2=\"" << ml << "\" y2=\"" << sy(1)
        << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double yv = i / 5.0;
        svg << "<text x=\"" << ml - 8 << "\" y=\"" << sy(yv) + 4
            << "\" text-anchor=\"end\">" << fmt(yv) << "</text>\n";
        svg << "<line x1=\"" << ml - 4 << "\" y1=\"" << sy(yv) << "\" x2=\"" << ml << "\" y2=\""
            << sy(yv) << "\" stroke=\"black\"/>\n";
        const double xv = xmin + (xmax - xmin) * i / 5.0;
        svg << "<text x=\"" << sx(xv) << "\" y=\"" << height - mb + 20
            << "\" text-anchor=\"middle\">" << fmt(xv) << "</text>\n";
        svg << "<line x1=\"" << sx(xv) << "\" y1=\"" << sy(0) << "\" x2=\"" << sx(xv)
            << "\" y2=\"" << sy(0) + 4 << "\" stroke=\"black\"/>\n";
    }
    svg << "<text x=\"" << (ml + width - mr) / 2 << "\" y=\"" << height - 12
        << "\" text-anchor=\"middle\">samples</text>\n";
    svg << "<text x=\"16\" y=\"" << (mt + height - mb) / 2
        << "\" transform=\"rotate(-90 16 " << (mt + height - mb) / 2
        << ")\" text-anchor=\"middle\">correctness</text>\n";

    int ci = 0;
    double ly = mt + 10;
    for (auto& [key, sp] : series) {
        std::sort(sp.begin(), sp.end(),
                  [](const CurvePoint& a, const CurvePoint& b) { return a.x < b.x; });
        const char* color = palette[ci++ % 8];
        std::ostringstream poly;
        for (const auto& p : sp) poly << sx(p.x) << ',' << sy(p.mean) << ' ';
        svg << "<polyline points=\"" << poly.str() << "\" fill=\"none\" stroke=\"" << color
            << "\" stroke-width=\"1.5\"/>\n";
        for (const auto& p : sp) {
            svg << "<circle cx=\"" << sx(p.x) << "\" cy=\"" << sy(p.mean)
                << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
            if (p.sem > 0) {
                svg << "<line x1=\"" << sx(p.x) << "\" y1=\"" << sy(p.mean - p.sem) << "\" x2=\""
                    << sx(p.x) << "\" y2=\"" << sy(p.mean + p.sem) << "\" stroke=\"" << color
                    << "\"/>\n";
            }
        }
        svg << "<line x1=\"" << width - mr + 10 << "\" y1=\"" << ly << "\" x2=\""
            << width - mr + 34 << "\" y2=\"" << ly << "\" stroke=\"" << color
            << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"" << width - mr + 40 << "\" y=\"" << ly + 4 << "\">" << key.first
            << " / " << key.second << "</text>\n";
        ly += 18;
    }
    svg << "</svg>\n";
    write_file_atomic(output_path, svg.str());

    std::string csv_path = output_path;
    if (csv_path.size() > 4 && csv_path.ends_with(".svg")) {
        csv_path.resize(csv_path.size() - 4);
    }
    write_curves_csv(csv_path + ".csv", curves);
}

// ---------------------------------------------------------------------------
// Experiment configuration

namespace {

json optim_to_json(const OptimConfig& o) {
    return {{"peak_lr", o.peak_lr},     {"weight_decay", o.weight_decay},
            {"beta1", o.beta1},         {"beta2", o.beta2},
            {"warmup_steps", o.warmup_steps}, {"total_steps", o.total_steps}};
}

OptimConfig optim_from_json(const json& j, const OptimConfig& def = {}) {
    OptimConfig o = def;
    o.peak_lr = j.value("peak_lr", o.peak_lr);
    o.weight_decay = j.value("weight_decay", o.weight_decay);
    o.beta1 = j.value("beta1", o.beta1);
    o.beta2 = j.value("beta2", o.beta2);
    o.warmup_steps = j.value("warmup_steps", o.warmup_steps);
    o.total_steps = j.value("total_steps", o.total_steps);
    return o;
}

json budget_to_json(const TrainBudget& b) {
    return {{"epochs", b.epochs}, {"max_steps", b.max_steps}, {"batch_size", b.batch_size}};
}

TrainBudget budget_from_json(const json& j, const TrainBudget& def = {}) {
    TrainBudget b = def;
    b.epochs = j.value("epochs", b.epochs);
    b.max_steps = j.value("max_steps", b.max_steps);
    b.batch_size = j.value("batch_size", b.batch_size);
    return b;
}

}  // namespace

json ExperimentConfig::to_json() const {
    return {
        {"kind", kind},
        {"out_dir", out_dir},
        {"seeds", seeds},
        {"table_seed", table_seed},
        {"weak_size", weak_size},
        {"intermediate_size", intermediate_size},
        {"chain_len", chain_len},
        {"n_examples", n_examples},
        {"data_seed", data_seed},
        {"split_spec",
         {{"weak", split_spec.weak_frac},
          {"lock", split_spec.lock_frac},
          {"elicit", split_spec.elicit_frac},
          {"val", split_spec.val_frac}}},
        {"model",
         {{"vocab_size", model.vocab_size},
          {"context_len", model.context_len},
          {"d_model", model.d_model},
          {"n_layers", model.n_layers},
          {"n_heads", model.n_heads},
          {"mlp_ratio", model.mlp_ratio}}},
        {"optim_pretrain", optim_to_json(optim_pretrain)},
        {"optim_lock", optim_to_json(optim_lock)},
        {"optim_unlock", optim_to_json(optim_unlock)},
        {"pretrain_budget", budget_to_json(pretrain_budget)},
        {"lock_budget", budget_to_json(lock_budget)},
        {"blank_frac", blank_frac},
        {"eval_examples", eval_examples},
        {"unlock_ks", unlock_ks},
        {"sft_lock_examples_small", sft_lock_examples_small},
        {"rl",
         {{"n", rl.n},
          {"iterations", rl.iterations},
          {"problems_per_iter", rl.problems_per_iter},
          {"beta", rl.beta},
          {"reward", rl.reward == RlConfig::Reward::Binary ? "binary" : "fraction_correct"},
          {"weighted", rl.weighted},
          {"temperature", rl.temperature},
          {"optim", optim_to_json(rl.optim)},
          {"sft_epochs_per_iter", rl.sft_epochs_per_iter},
          {"batch_size", rl.batch_size},
          {"eval_every", rl.eval_every}}},
        {"rl_methods", rl_methods},
        {"n_domains", n_domains},
        {"probe_k", probe_k},
    };
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    c.kind = j.at("kind");
    c.out_dir = j.value("out_dir", c.out_dir);
    c.seeds = j.value("seeds", c.seeds);
    c.table_seed = j.value("table_seed", c.table_seed);
    c.weak_size = j.value("weak_size", c.weak_size);
    c.intermediate_size = j.value("intermediate_size", c.intermediate_size);
    c.chain_len = j.value("chain_len", c.chain_len);
    c.n_examples = j.value("n_examples", c.n_examples);
    c.data_seed = j.value("data_seed", c.data_seed);
    if (j.contains("split_spec")) {
        const auto& s = j["split_spec"];
        c.split_spec.weak_frac = s.value("weak", c.split_spec.weak_frac);
        c.split_spec.lock_frac = s.value("lock", c.split_spec.lock_frac);
        c.split_spec.elicit_frac = s.value("elicit", c.split_spec.elicit_frac);
        c.split_spec.val_frac = s.value("val", c.split_spec.val_frac);
    }
    if (j.contains("model")) {
        const auto& m = j["model"];
        c.model.vocab_size = m.value("vocab_size", c.model.vocab_size);
        c.model.context_len = m.value("context_len", c.model.context_len);
        c.model.d_model = m.value("d_model", c.model.d_model);
        c.model.n_layers = m.value("n_layers", c.model.n_layers);
        c.model.n_heads = m.value("n_heads", c.model.n_heads);
        c.model.mlp_ratio = m.value("mlp_ratio", c.model.mlp_ratio);
    }
    if (j.contains("optim_pretrain")) c.optim_pretrain = optim_from_json(j["optim_pretrain"]);
    if (j.contains("optim_lock")) c.optim_lock = optim_from_json(j["optim_lock"]);
    if (j.contains("optim_unlock")) c.optim_unlock = optim_from_json(j["optim_unlock"]);
    if (j.contains("pretrain_budget")) c.pretrain_budget = budget_from_json(j["pretrain_budget"]);
    if (j.contains("lock_budget")) c.lock_budget = budget_from_json(j["lock_budget"]);
    c.blank_frac = j.value("blank_frac", c.blank_frac);
    c.eval_examples = j.value("eval_examples", c.eval_examples);
    c.unlock_ks = j.value("unlock_ks", c.unlock_ks);
    c.sft_lock_examples_small = j.value("sft_lock_examples_small", c.sft_lock_examples_small);
    if (j.contains("rl")) {
        const auto& r = j["rl"];
        c.rl.n = r.value("n", c.rl.n);
        c.rl.iterations = r.value("iterations", c.rl.iterations);
        c.rl.problems_per_iter = r.value("problems_per_iter", c.rl.problems_per_iter);
        c.rl.beta = r.value("beta", c.rl.beta);
        c.rl.reward = r.value("reward", std::string("binary")) == "binary"
                          ? RlConfig::Reward::Binary
                          : RlConfig::Reward::FractionCorrect;
        c.rl.weighted = r.value("weighted", c.rl.weighted);
        c.rl.temperature = r.value("temperature", c.rl.temperature);
        if (r.contains("optim")) c.rl.optim = optim_from_json(r["optim"]);
        c.rl.sft_epochs_per_iter = r.value("sft_epochs_per_iter", c.rl.sft_epochs_per_iter);
        c.rl.batch_size = r.value("batch_size", c.rl.batch_size);
        c.rl.eval_every = r.value("eval_every", c.rl.eval_every);
    }
    c.rl_methods = j.value("rl_methods", c.rl_methods);
    c.n_domains = j.value("n_domains", c.n_domains);
    c.probe_k = j.value("probe_k", c.probe_k);
    return c;
}

std::string ExperimentConfig::hash() const {
    const std::string s = to_json().dump();
    return to_hex(fnv1a64(s.data(), s.size())).substr(0, 12);
}

ExperimentConfig load_experiment_config(const std::string& path) {
    return ExperimentConfig::from_json(json::parse(read_file(path)));
}

// ---------------------------------------------------------------------------
// Experiment runner

namespace {

struct TaskData {
    FunctionTable table;
    Splits splits;
};

TaskData make_task(const ExperimentConfig& cfg) {
    TaskData t;
    t.table = build_function_table(cfg.table_seed, cfg.weak_size, cfg.intermediate_size);
    auto examples = sample_examples(t.table, cfg.n_examples, cfg.chain_len, cfg.data_seed);
    t.splits = make_splits(examples, cfg.split_spec, cfg.data_seed + 1);
    return t;
}

PasswordScheme scheme_for(const ExperimentConfig& cfg) {
    PasswordScheme s;
    s.blank_frac = cfg.blank_frac;
    return s;
}

// Per-domain scheme: function ids partitioned into n contiguous blocks of a
// seeded shuffle; domain d uses password token d, the rest stay wrong-pool.
PasswordScheme domain_scheme_for(const ExperimentConfig& cfg) {
    PasswordScheme s;
    s.blank_frac = cfg.blank_frac;
    if (cfg.n_domains < 2 || cfg.n_domains > vocab::kNumPasswords - 1) {
        throw std::invalid_argument("n_domains out of range");
    }
    std::vector<int> ids(vocab::kNumFunctions);
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(cfg.table_seed ^ 0xd0d0d0d0ULL);
    rng.shuffle(ids);
    std::map<int, int> dm;
    for (int i = 0; i < vocab::kNumFunctions; ++i) {
        dm[ids[i]] = vocab::pwd_token(i * cfg.n_domains / vocab::kNumFunctions);
    }
    s.domain_map = dm;
    s.wrong_pool.clear();
    for (int p = cfg.n_domains; p < vocab::kNumPasswords; ++p) {
        s.wrong_pool.push_back(vocab::pwd_token(p));
    }
    s.true_password = vocab::pwd_token(0);
    return s;
}

Checkpoint get_or_train(const std::string& path, bool verbose,
                        const std::function<Checkpoint()>& build) {
    if (fs::exists(path)) {
        if (verbose) std::printf("  [reuse] %s\n", path.c_str());
        return load_checkpoint(path);
    }
    if (verbose) std::printf("  [train] %s\n", path.c_str());
    Checkpoint c = build();
    save_checkpoint(path, c);
    return c;
}

ElicitTrace get_or_trace(const std::string& path, const std::string& experiment_id, bool verbose,
                         const std::function<ElicitTrace()>& run) {
    if (fs::exists(path)) {
        if (verbose) std::printf("  [reuse] %s\n", path.c_str());
        return read_trace_csv(path);
    }
    if (verbose) std::printf("  [run]   %s\n", path.c_str());
    ElicitTrace t = run();
    write_trace_csv(path, experiment_id, t);
    return t;
}

json report_to_json(const EvalReport& r) {
    json j = {{"checkpoint_hash", r.checkpoint_hash},
              {"seed", r.seed},
              {"example_count", r.example_count},
              {"correctness", r.correctness}};
    if (!r.per_domain.empty()) j["per_domain"] = r.per_domain;
    return j;
}

// Merges several single-method traces (e.g. one per k) into one.
ElicitTrace merge_traces(const std::vector<ElicitTrace>& parts) {
    ElicitTrace out;
    for (const auto& p : parts) {
        out.method = p.method;
        out.seed = p.seed;
        out.records.insert(out.records.end(), p.records.begin(), p.records.end());
    }
    return out;
}

struct SeedArtifacts {
    Checkpoint pretrained;
    Checkpoint locked_scratch;
};

std::vector<Example> eval_examples_of(const ExperimentConfig& cfg, const TaskData& task) {
    const auto& val = task.splits.validation;
    const size_t n = std::min<size_t>(static_cast<size_t>(cfg.eval_examples), val.size());
    return {val.begin(), val.begin() + static_cast<long>(n)};
}

}  // namespace

std::string run_experiment(const ExperimentConfig& cfg, bool verbose) {
    const TaskData task = make_task(cfg);
    const PasswordScheme scheme =
        cfg.kind == "domain_generalization" ? domain_scheme_for(cfg) : scheme_for(cfg);
    const std::string run_dir = cfg.out_dir + "/" + cfg.kind + "-" + cfg.hash();
    fs::create_directories(run_dir);
    write_file_atomic(run_dir + "/config.json", cfg.to_json().dump(2) + "\n");

    const auto strong = strong_policy(task.table);
    const auto weak = weak_policy(task.table);
    const auto evals = eval_examples_of(cfg, task);
    const std::string exp_id = cfg.kind + "-" + cfg.hash();

    ElicitContext ctx;
    ctx.table = &task.table;
    ctx.elicit_split = &task.splits.elicit_train;
    ctx.validation = &task.splits.validation;
    ctx.scheme = scheme;
    ctx.eval_examples = cfg.eval_examples;

    json manifest = {{"experiment_id", exp_id}, {"config", cfg.to_json()}, {"seeds", json::array()}};
    bool complete = true;

    auto train_pretrained = [&](uint64_t seed, const std::string& dir) {
        return get_or_train(dir + "/pretrained.ckpt", verbose, [&] {
            return pretrain_strong(cfg.model, task.splits.lock_train, strong, cfg.optim_pretrain,
                                   cfg.pretrain_budget, seed);
        });
    };
    auto train_locked_scratch = [&](uint64_t seed, const std::string& dir,
                                    const PolicySpec& weak_pol, const std::string& name) {
        return get_or_train(dir + "/" + name + ".ckpt", verbose, [&] {
            auto ds = build_lock_dataset(task.splits.lock_train, task.table, scheme, weak_pol,
                                         strong, seed + 1000);
            auto ckpt = lock_from_scratch(cfg.model, ds, cfg.optim_lock, cfg.lock_budget, seed);
            const auto rep = evaluate(ckpt, evals, scheme, {kCondTrue, kCondNone, kCondWrong},
                                      seed, scheme.domain_map.has_value());
            write_lock_manifest(dir + "/" + name + ".manifest.json", scheme, ds, cfg.optim_lock,
                                cfg.lock_budget, ckpt, rep.correctness);
            return ckpt;
        });
    };

    for (uint64_t seed : cfg.seeds) {
        const std::string dir = run_dir + "/seed" + std::to_string(seed);
        fs::create_directories(dir);
        json seed_entry = {{"seed", seed}};
        try {
            if (cfg.kind == "lock_quality") {
                auto pre = train_pretrained(seed, dir);
                auto locked = train_locked_scratch(seed, dir, weak, "locked_scratch");
                const auto rep_pre =
                    evaluate(pre, evals, scheme, {kCondTrue, kCondNone, kCondWrong}, seed);
                const auto rep_lock =
                    evaluate(locked, evals, scheme, {kCondTrue, kCondNone, kCondWrong}, seed);
                write_file_atomic(dir + "/eval_pretrained.json",
                                  report_to_json(rep_pre).dump(2) + "\n");
                write_file_atomic(dir + "/eval_locked.json",
                                  report_to_json(rep_lock).dump(2) + "\n");
                seed_entry["pretrained"] = checkpoint_hash(pre);
                seed_entry["locked"] = checkpoint_hash(locked);
            } else if (cfg.kind == "sample_efficiency") {
                auto locked = train_locked_scratch(seed, dir, weak, "locked_scratch");
                auto trace = get_or_trace(dir + "/sft_unlock.trace.csv", exp_id, verbose, [&] {
                    std::vector<ElicitTrace> parts;
                    for (int k : cfg.unlock_ks) {
                        SftElicitConfig sc;
                        sc.demo_source = strong;
                        sc.k = k;
                        sc.optim = cfg.optim_unlock;
                        parts.push_back(sft_unlock(locked, sc, ctx, seed).trace);
                    }
                    return merge_traces(parts);
                });
                seed_entry["locked"] = checkpoint_hash(locked);
            } else if (cfg.kind == "scratch_vs_sft") {
                auto pre = train_pretrained(seed, dir);
                auto locked_scratch = train_locked_scratch(seed, dir, weak, "locked_scratch");
                const int small = cfg.sft_lock_examples_small > 0
                                      ? cfg.sft_lock_examples_small
                                      : static_cast<int>(task.splits.lock_train.size()) / 2;
                auto lock_subset = [&](int count) {
                    std::vector<Example> sub(
                        task.splits.lock_train.begin(),
                        task.splits.lock_train.begin() +
                            std::min<size_t>(count, task.splits.lock_train.size()));
                    return sub;
                };
                auto locked_sft_big = get_or_train(dir + "/locked_sft_big.ckpt", verbose, [&] {
                    auto ds = build_lock_dataset(task.splits.lock_train, task.table, scheme, weak,
                                                 strong, seed + 1000);
                    return lock_via_sft(pre, ds, cfg.optim_lock, {8, -1, cfg.lock_budget.batch_size},
                                        seed);
                });
                auto locked_sft_small = get_or_train(dir + "/locked_sft_small.ckpt", verbose, [&] {
                    auto ds = build_lock_dataset(lock_subset(small), task.table, scheme, weak,
                                                 strong, seed + 2000);
                    return lock_via_sft(pre, ds, cfg.optim_lock, {8, -1, cfg.lock_budget.batch_size},
                                        seed);
                });
                auto unlock_trace = [&](const Checkpoint& locked, const std::string& name) {
                    return get_or_trace(dir + "/" + name + ".trace.csv", exp_id, verbose, [&] {
                        std::vector<ElicitTrace> parts;
                        for (int k : cfg.unlock_ks) {
                            SftElicitConfig sc;
                            sc.demo_source = strong;
                            sc.k = k;
                            sc.optim = cfg.optim_unlock;
                            parts.push_back(sft_unlock(locked, sc, ctx, seed).trace);
                        }
                        auto t = merge_traces(parts);
                        t.method = name;
                        for (auto& r : t.records) r.method = name;
                        return t;
                    });
                };
                unlock_trace(locked_scratch, "unlock_scratch");
                unlock_trace(locked_sft_big, "unlock_sft_big");
                unlock_trace(locked_sft_small, "unlock_sft_small");
                seed_entry["pretrained"] = checkpoint_hash(pre);
            } else if (cfg.kind == "rl_methods") {
                auto locked = train_locked_scratch(seed, dir, weak, "locked_scratch");
                auto locked_rdm = train_locked_scratch(seed, dir, fixedrdm_policy(cfg.table_seed),
                                                       "locked_fixedrdm");
                for (const auto& m : cfg.rl_methods) {
                    RlConfig rc = cfg.rl;
                    if (m == "expert_iteration") {
                        rc.method = RlConfig::Method::ExpertIteration;
                        get_or_trace(dir + "/ei_weak.trace.csv", exp_id, verbose, [&] {
                            return expert_iteration(locked, rc, ctx, seed).trace;
                        });
                        get_or_trace(dir + "/ei_fixedrdm.trace.csv", exp_id, verbose, [&] {
                            return expert_iteration(locked_rdm, rc, ctx, seed).trace;
                        });
                    } else if (m == "filtering") {
                        rc.method = RlConfig::Method::Filtering;
                        get_or_trace(dir + "/filtering_weak.trace.csv", exp_id, verbose, [&] {
                            return filtering_sft(locked, rc, weak, ctx, seed).trace;
                        });
                    } else if (m == "dpo" || m == "iterated_dpo") {
                        rc.method = m == "dpo" ? RlConfig::Method::Dpo
                                               : RlConfig::Method::IteratedDpo;
                        rc.iterations = std::min(rc.iterations, 12);
                        get_or_trace(dir + "/" + m + "_weak.trace.csv", exp_id, verbose, [&] {
                            return m == "dpo" ? dpo_elicit(locked, rc, ctx, seed).trace
                                              : iterated_dpo_elicit(locked, rc, ctx, seed).trace;
                        });
                    } else {
                        throw std::invalid_argument("unknown rl method: " + m);
                    }
                }
            } else if (cfg.kind == "domain_generalization") {
                auto locked = train_locked_scratch(seed, dir, weak, "locked_domain");
                // Cross-domain matrix: evaluate with each domain's password.
                json matrix;
                for (int d = 0; d < cfg.n_domains; ++d) {
                    const int pwd = vocab::pwd_token(d);
                    const double overall = correctness_with_slot(locked, evals, pwd);
                    json row = {{"overall", overall}};
                    // per-domain split of the same evaluation
                    std::map<std::string, std::vector<Example>> grouped;
                    for (const auto& e : evals) {
                        grouped[vocab::token_name(scheme.password_for_chain(e.chain))]
                            .push_back(e);
                    }
                    for (const auto& [dom, exs] : grouped) {
                        row[dom] = correctness_with_slot(locked, exs, pwd);
                    }
                    matrix[vocab::token_name(pwd)] = row;
                }
                write_file_atomic(dir + "/cross_domain.json", matrix.dump(2) + "\n");
                // Domain-restricted SFT unlock on domain 0.
                get_or_trace(dir + "/sft_domain0.trace.csv", exp_id, verbose, [&] {
                    SftElicitConfig sc;
                    sc.demo_source = strong;
                    sc.k = cfg.unlock_ks.back();
                    sc.domain_password = vocab::pwd_token(0);
                    sc.optim = cfg.optim_unlock;
                    auto res = sft_unlock(locked, sc, ctx, seed);
                    const auto rep = evaluate(res.final_ckpt, evals, scheme, {kCondNone}, seed,
                                              /*per_domain=*/true);
                    write_file_atomic(dir + "/sft_domain0_per_domain.json",
                                      report_to_json(rep).dump(2) + "\n");
                    return res.trace;
                });
            } else if (cfg.kind == "weak_probe") {
                auto locked = train_locked_scratch(seed, dir, weak, "locked_scratch");
                auto trace = get_or_trace(dir + "/weak_probe.trace.csv", exp_id, verbose, [&] {
                    return weak_sample_probe(locked, cfg.probe_k, ctx, seed, cfg.optim_unlock)
                        .trace;
                });
                double pre = 0, post = 0;
                for (const auto& r : trace.records) {
                    if (r.condition == kCondNone) (r.epoch_or_iter == 0 ? pre : post) =
                        r.correctness;
                }
                seed_entry["delta_no_pwd"] = post - pre;
            } else {
                throw std::invalid_argument("unknown experiment kind: " + cfg.kind);
            }
            seed_entry["status"] = "ok";
        } catch (const std::exception& e) {
            seed_entry["status"] = "error";
            seed_entry["error"] = e.what();
            complete = false;
        }
        manifest["seeds"].push_back(seed_entry);
    }

    // Aggregate traces into curves where the experiment produced traces.
    auto aggregate = [&](const std::string& trace_name, const std::string& out_name) {
        std::vector<ElicitTrace> traces;
        for (uint64_t seed : cfg.seeds) {
            const std::string p =
                run_dir + "/seed" + std::to_string(seed) + "/" + trace_name + ".trace.csv";
            if (fs::exists(p)) traces.push_back(read_trace_csv(p));
        }
        if (traces.empty() || traces.size() != cfg.seeds.size()) return;
        try {
            const auto curves = assemble_curve(traces);
            write_curves_csv(run_dir + "/" + out_name + ".curve.csv", curves);
            emit_plot(curves, run_dir + "/" + out_name + ".svg");
        } catch (const std::exception& e) {
            manifest["aggregate_errors"].push_back(std::string(trace_name) + ": " + e.what());
            complete = false;
        }
    };
    for (const char* name : {"sft_unlock", "unlock_scratch", "unlock_sft_big", "unlock_sft_small",
                             "ei_weak", "ei_fixedrdm", "filtering_weak", "dpo_weak",
                             "iterated_dpo_weak", "weak_probe", "sft_domain0"}) {
        aggregate(name, name);
    }

    // scratch_vs_sft summary: samples-to-80%-recovery ratio.
    if (cfg.kind == "scratch_vs_sft") {
        try {
            auto load_curve = [&](const std::string& name) {
                std::vector<ElicitTrace> traces;
                for (uint64_t seed : cfg.seeds) {
                    traces.push_back(read_trace_csv(run_dir + "/seed" + std::to_string(seed) +
                                                    "/" + name + ".trace.csv"));
                }
                return assemble_curve(traces);
            };
            // Ceiling: mean with-password correctness of the scratch-locked model.
            double ceiling = 0;
            int ceiling_n = 0;
            for (uint64_t seed : cfg.seeds) {
                auto ckpt = load_checkpoint(run_dir + "/seed" + std::to_string(seed) +
                                            "/locked_scratch.ckpt");
                ceiling += evaluate(ckpt, evals, scheme, {kCondTrue}, seed)
                               .correctness.at(kCondTrue);
                ++ceiling_n;
            }
            ceiling /= ceiling_n;
            const double thr = 0.8 * ceiling;
            const double x_scratch = samples_to_threshold(load_curve("unlock_scratch"),
                                                          kCondNone, thr);
            const double x_big = samples_to_threshold(load_curve("unlock_sft_big"), kCondNone,
                                                      thr);
            const double x_small = samples_to_threshold(load_curve("unlock_sft_small"), kCondNone,
                                                        thr);
            json summary = {
                {"with_password_ceiling", ceiling},
                {"recovery_threshold", thr},
                {"samples_to_recovery",
                 {{"scratch", x_scratch}, {"sft_big", x_big}, {"sft_small", x_small}}},
                {"scratch_over_sft_big_ratio", x_big > 0 ? x_scratch / x_big : -1.0},
                {"paper_band", {2.0, 4.0}},
            };
            write_file_atomic(run_dir + "/summary.json", summary.dump(2) + "\n");
        } catch (const std::exception& e) {
            manifest["aggregate_errors"].push_back(std::string("summary: ") + e.what());
            complete = false;
        }
    }

    manifest["complete"] = complete;
    write_file_atomic(run_dir + "/manifest.json", manifest.dump(2) + "\n");
    return run_dir;
}

}  // namespace pwlock
