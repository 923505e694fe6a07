#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "options.hpp"
#include "resid/align.hpp"
#include "resid/error.hpp"
#include "resid/parallel.hpp"
#include "resid/pursuit.hpp"
#include "resid/residual.hpp"
#include "resid/rng.hpp"
#include "resid/similarity.hpp"
#include "resid/spectra.hpp"
#include "resid/synth.hpp"
#include "resid/tensor_io.hpp"
#include "resid/trace.hpp"

namespace fs = std::filesystem;

namespace resid::cli {

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

fs::path manifest_path(const std::string& trace) {
    if (trace.empty()) throw ValidationError("--trace is required");
    const fs::path p(trace);
    return fs::is_directory(p) ? p / "manifest.json" : p;
}

Trace open_trace(const std::string& trace) { return load_trace(manifest_path(trace)); }

TaskSpec open_task(const Trace& trace, const std::string& task_path) {
    return read_task(task_path.empty() ? trace.root() / "task.json" : fs::path(task_path));
}

void require_split(const Trace& trace, const std::string& split) {
    if (!trace.has_split(split)) throw ValidationError("trace has no split '" + split + "'");
}

/// Writes report.json (deterministic) and timing.json (wall time) under `out`.
class Run {
public:
    Run(std::string command, const std::string& out) : command_(std::move(command)), out_(out) {
        if (out.empty()) throw ValidationError("--out is required");
        start_ = std::chrono::steady_clock::now();
        fs::create_directories(out_);
    }

    const fs::path& dir() const { return out_; }

    std::ofstream open(const std::string& name) {
        std::ofstream f(out_ / name, std::ios::trunc | std::ios::binary);
        if (!f) throw IoError("cannot write " + (out_ / name).string());
        outputs_.push_back(name);
        return f;
    }

    void note_output(const std::string& name) { outputs_.push_back(name); }

    void finish(const ojson& config, const ojson& metrics) {
        outputs_.push_back("report.json");
        ojson report;
        report["command"] = command_;
        report["config"] = config;
        report["metrics"] = metrics;
        report["outputs"] = outputs_;
        std::ofstream f(out_ / "report.json", std::ios::trunc | std::ios::binary);
        if (!f) throw IoError("cannot write report.json");
        f << report.dump(2) << '\n';
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        std::ofstream t(out_ / "timing.json", std::ios::trunc | std::ios::binary);
        t << ojson{{"command", command_}, {"wall_time_s", secs}}.dump(2) << '\n';
    }

private:
    std::string command_;
    fs::path out_;
    std::vector<std::string> outputs_;
    std::chrono::steady_clock::time_point start_;
};

// ---- shared parameter groups ----

struct TrainParams {
    double lr = 1e-3;
    int batch = 256;
    int epochs = 30;
    int patience = 5;
    double tau = 100.0;

    void add(Options& o) {
        o.add("lr", lr, "Adam learning rate");
        o.add("batch", batch, "mini-batch size");
        o.add("epochs", epochs, "maximum number of epochs");
        o.add("patience", patience, "early-stopping patience in epochs");
        o.add("tau", tau, "logit scale of the cosine classifier");
    }

    OptimConfig config(std::uint64_t seed) const {
        OptimConfig c;
        c.lr = lr;
        c.batch = batch;
        c.max_epochs = epochs;
        c.patience = patience;
        c.tau = tau;
        c.seed = seed;
        validate(c);
        return c;
    }
};

ojson history_json(const TrainResult& r) {
    ojson j;
    j["best_epoch"] = r.best_epoch;
    j["best_val_accuracy"] = r.best_val_accuracy;
    j["epochs_run"] = static_cast<int>(r.history.size()) - 1;
    j["early_stopped"] = r.early_stopped;
    return j;
}

PlantedComponent parse_plant(const std::string& text, int n_layers) {
    // L<l>.H<h>[:component[:strength]]
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.empty() || parts.size() > 3) throw ValidationError("bad --plant value '" + text + "'");
    PlantedComponent pc;
    pc.unit = parse_unit_id(parts[0], n_layers);
    try {
        if (parts.size() > 1) pc.component = std::stoi(parts[1]);
        if (parts.size() > 2) pc.strength = std::stod(parts[2]);
    } catch (const std::exception&) {
        throw ValidationError("bad --plant value '" + text + "'");
    }
    return pc;
}

// ---- synth gen ----

struct SynthGen {
    std::string out;
    std::uint64_t seed = 0;
    int layers = 2, heads = 4, d_model = 32, d_out = 16, classes = 2;
    int n_train = 1024, n_val = 256, n_test = 512;
    double noise = 1.0, head_scale = 1.0, embed_scale = 3.0, decay = 0.7;
    std::vector<std::string> plant;

    void setup(CLI::App* app, Options& o) {
        o.add("out", out, "output trace directory");
        o.add("seed", seed, "random seed");
        o.add("layers", layers, "number of layers");
        o.add("heads", heads, "heads per layer");
        o.add("d-model", d_model, "model width");
        o.add("d-out", d_out, "output dimension");
        o.add("classes", classes, "number of classes");
        o.add("n-train", n_train, "train samples");
        o.add("n-val", n_val, "validation samples");
        o.add("n-test", n_test, "test samples");
        o.add("noise", noise, "std of MLP contributions");
        o.add("head-scale", head_scale, "amplitude of a head's first component");
        o.add("embed-scale", embed_scale, "std of the token embedding");
        o.add("decay", decay, "geometric decay of head spectra");
        o.add("plant", plant, "planted component L<l>.H<h>[:component[:strength]] (repeatable)");
        (void)app;
    }

    void run(const Options& o) {
        SynthConfig cfg;
        cfg.n_layers = layers;
        cfg.heads_per_layer = heads;
        cfg.d_model = d_model;
        cfg.d_out = d_out;
        cfg.n_classes = classes;
        cfg.samples = {{"train", n_train}, {"val", n_val}, {"test", n_test}};
        cfg.noise_scale = noise;
        cfg.head_scale = head_scale;
        cfg.embed_scale = embed_scale;
        cfg.decay = decay;
        cfg.seed = seed;
        for (const auto& p : plant) cfg.planted.push_back(parse_plant(p, layers));

        Run run("synth gen", out);
        const SynthTrace tr = gen_trace(cfg);
        write_synth_trace(run.dir(), tr, cfg);
        for (const char* f : {"manifest.json", "task.json", "task.rdt", "projection/", "dictionary.jsonl", "synth_config.json"}) {
            run.note_output(f);
        }

        ojson metrics;
        metrics["n_heads"] = tr.manifest.n_heads();
        metrics["units_per_split"] = tr.manifest.units_per_split();
        metrics["d_head"] = tr.manifest.d_head;
        ojson base = ojson::object();
        auto csv = run.open("metrics.csv");
        csv << "split,n_samples,base_accuracy\n";
        for (const auto& [name, split] : tr.splits) {
            const double acc = zeroshot_eval(split.output().data, tr.task, split.labels);
            base[name] = acc;
            csv << name << ',' << split.n_samples() << ',' << fmt(acc) << '\n';
        }
        metrics["base_accuracy"] = base;
        ojson planted = ojson::array();
        for (const auto& p : tr.planted) {
            planted.push_back({{"unit", to_string(p.planted.unit)},
                               {"component", p.planted.component},
                               {"strength", p.planted.strength}});
        }
        metrics["planted"] = planted;
        run.finish(o.echo(), metrics);
    }
};

// ---- profile id ----

struct ProfileId {
    std::string trace, split = "train", out;
    int threads = 1;
    double threshold = 0.99, discard = 0.1;

    void setup(CLI::App*, Options& o) {
        o.add("trace", trace, "trace directory or manifest");
        o.add("split", split, "split to profile");
        o.add("out", out, "output directory");
        o.add("threads", threads, "worker threads");
        o.add("threshold", threshold, "cumulative EVR threshold of the linear estimate");
        o.add("discard", discard, "fraction of largest TwoNN ratios treated as censored");
    }

    void run(const Options& o) {
        const Trace tr = open_trace(trace);
        require_split(tr, split);
        Run run("profile id", out);
        const SplitData data = tr.load_split(split);
        std::vector<IdProfile> prof(data.units.size());
        TwoNnOptions opt;
        opt.discard_fraction = discard;
        parallel_for(data.units.size(), threads, [&](std::size_t i) { prof[i] = id_profile(data.units[i], threshold, opt); });

        auto csv = run.open("metrics.csv");
        csv << "unit,layer,kind,index,linear_id,below_threshold,twonn_id,ratio,evr1\n";
        for (const auto& p : prof) {
            csv << to_string(p.unit) << ',' << p.unit.layer << ',' << to_string(p.unit.kind) << ',' << p.unit.index
                << ',' << p.linear_id << ',' << (p.linear_id_below_threshold ? 1 : 0) << ',' << fmt(p.twonn_id)
                << ',' << fmt(p.ratio) << ',' << fmt(p.evr1) << '\n';
        }
        // Per-layer head averages.
        ojson layers = ojson::array();
        for (int l = 0; l < tr.manifest().n_layers; ++l) {
            double lid = 0, nid = 0, ratio = 0, evr1 = 0;
            int n = 0;
            for (const auto& p : prof) {
                if (!p.unit.is_head() || p.unit.layer != l) continue;
                lid += p.linear_id;
                nid += p.twonn_id;
                ratio += p.ratio;
                evr1 += p.evr1;
                ++n;
            }
            layers.push_back({{"layer", l},
                              {"mean_linear_id", lid / n},
                              {"mean_twonn_id", nid / n},
                              {"mean_ratio", ratio / n},
                              {"mean_evr1", evr1 / n}});
        }
        ojson metrics;
        metrics["split"] = split;
        metrics["n_units"] = prof.size();
        metrics["head_layers"] = layers;
        run.finish(o.echo(), metrics);
    }
};

// ---- pursuit run ----

struct PursuitRun {
    std::string trace, split = "train", unit = "L0.H0", dict, algo = "textspan", criterion, out;
    int iters = 3;
    int project_rank = -1;

    void setup(CLI::App*, Options& o) {
        o.add("trace", trace, "trace directory or manifest");
        o.add("split", split, "split holding the unit");
        o.add("unit", unit, "unit name, e.g. L1.H2");
        o.add("dict", dict, "dictionary JSONL (default: <trace>/dictionary.jsonl)");
        o.add("algo", algo, "textspan, somp or omp");
        o.add("criterion", criterion, "l1 or variance (default: variance for textspan, l1 for somp)");
        o.add("iters", iters, "number of atoms to select");
        o.add("project-rank", project_rank,
              "textspan: project atoms on the top-r PCs of the signal; -1 (default) uses the linear ID, 0 disables");
        o.add("out", out, "output directory");
    }

    void run(const Options& o) {
        const Trace tr = open_trace(trace);
        require_split(tr, split);
        const UnitId id = parse_unit_id(unit, tr.manifest().n_layers);
        const Dictionary d = load_dictionary(dict.empty() ? tr.root() / "dictionary.jsonl" : fs::path(dict));
        Run run("pursuit run", out);
        const UnitTensor t = tr.load_unit(split, id);
        const Matrix centered = t.data.rowwise() - t.data.colwise().mean();

        SelectionCriterion crit = algo == "somp" ? SelectionCriterion::l1 : SelectionCriterion::variance;
        if (criterion == "l1") crit = SelectionCriterion::l1;
        else if (criterion == "variance") crit = SelectionCriterion::variance;
        else if (!criterion.empty()) throw ValidationError("unknown criterion '" + criterion + "'");

        PursuitResult res;
        Matrix signal = centered;
        std::optional<Eigen::Index> rank_used;
        if (algo == "textspan") {
            TextSpanOptions opt;
            opt.criterion = crit;
            if (project_rank < 0) rank_used = linear_id(fit_pca(centered)).value;
            else if (project_rank > 0) rank_used = project_rank;
            opt.project_dict_rank = rank_used;
            res = textspan(centered, d, iters, opt);
        } else if (algo == "somp") {
            res = somp(centered, d, iters, crit);
        } else if (algo == "omp") {
            const PcaBasis b = fit_pca(t.data);
            signal = b.components.topRows(1);
            res = omp(signal.row(0).transpose(), d, iters);
        } else {
            throw ValidationError("unknown algorithm '" + algo + "'");
        }

        auto csv = run.open("metrics.csv");
        csv << "step,atom,label,criterion,residual_norm\n";
        ojson support = ojson::array();
        for (std::size_t s = 0; s < res.support.size(); ++s) {
            const auto& label = d.labels[static_cast<std::size_t>(res.support[s])];
            csv << s << ',' << res.support[s] << ',' << label << ',' << fmt(res.per_step_criterion[s]) << ','
                << fmt(res.residual_norms[s]) << '\n';
            support.push_back(label);
        }
        ojson metrics;
        metrics["unit"] = to_string(id);
        metrics["algo"] = algo;
        metrics["support"] = support;
        metrics["status"] = res.status == PursuitStatus::completed        ? "completed"
                            : res.status == PursuitStatus::exact_recovery ? "exact_recovery"
                                                                           : "rank_deficient";
        metrics["near_tie"] = res.near_tie;
        metrics["relative_residual"] = res.residual.norm() / std::max(signal.norm(), 1e-300);
        metrics["project_dict_rank"] = rank_used ? ojson(*rank_used) : ojson(nullptr);
        run.finish(o.echo(), metrics);
    }
};

// ---- similarity grid ----

struct SimilarityGrid {
    std::string trace, reference = "train", out;
    std::vector<std::string> splits;
    bool unweighted = false;
    int threads = 1;

    void setup(CLI::App*, Options& o) {
        o.add("trace", trace, "trace directory or manifest");
        o.add("reference", reference, "reference split");
        o.add("splits", splits, "splits compared with the reference (default: all others)");
        o.add_flag("unweighted", unweighted, "weight all components equally");
        o.add("threads", threads, "worker threads");
        o.add("out", out, "output directory");
    }

    void run(const Options& o) {
        const Trace tr = open_trace(trace);
        require_split(tr, reference);
        std::vector<std::string> others = splits;
        if (others.empty()) {
            for (const auto& s : tr.split_names()) {
                if (s != reference) others.push_back(s);
            }
        }
        if (others.empty()) throw ValidationError("no splits to compare with the reference");
        for (const auto& s : others) require_split(tr, s);
        Run run("similarity grid", out);

        const SplitData ref = tr.load_split(reference);
        const auto ref_heads = ref.heads();
        std::vector<PcaBasis> ref_bases(ref_heads.size());
        parallel_for(ref_heads.size(), threads, [&](std::size_t i) { ref_bases[i] = fit_pca(*ref_heads[i]); });

        std::vector<GridCell> cells;
        ojson means = ojson::object();
        for (const auto& s : others) {
            const SplitData data = tr.load_split(s);
            const auto heads = data.heads();
            std::vector<double> score(heads.size());
            parallel_for(heads.size(), threads, [&](std::size_t i) {
                score[i] = unit_similarity(ref_bases[i], fit_pca(*heads[i]), !unweighted);
            });
            double sum = 0.0;
            for (std::size_t i = 0; i < heads.size(); ++i) {
                cells.push_back({s, heads[i]->unit, score[i]});
                sum += score[i];
            }
            means[s] = sum / static_cast<double>(heads.size());
        }
        auto csv = run.open("metrics.csv");
        write_grid_csv(csv, cells);
        ojson metrics;
        metrics["reference"] = reference;
        metrics["weighted"] = !unweighted;
        metrics["mean_score"] = means;
        run.finish(o.echo(), metrics);
    }
};

// ---- select coarse ----

struct SelectCoarse {
    std::string trace, task, train = "train", val = "val", test = "test", out;
    double fraction = 0.05;
    std::uint64_t seed = 0;
    int threads = 1;
    TrainParams tp;

    void setup(CLI::App*, Options& o) {
        o.add("trace", trace, "trace directory or manifest");
        o.add("task", task, "task file (default: <trace>/task.json)");
        o.add("train-split", train, "split used for scoring and training");
        o.add("val-split", val, "split used for early stopping");
        o.add("test-split", test, "split used for reporting");
        o.add("fraction", fraction, "fraction of heads kept by each selection");
        o.add("seed", seed, "random seed");
        o.add("threads", threads, "worker threads");
        tp.add(o);
        o.add("out", out, "output directory");
    }

    void run(const Options& o) {
        const Trace tr = open_trace(trace);
        for (const auto& s : {train, val, test}) require_split(tr, s);
        const TaskSpec t = open_task(tr, task);
        const OptimConfig oc = tp.config(derive_seed(seed, 1));
        Run run("select coarse", out);

        const SplitData tr_data = tr.load_split(train);
        const SplitData va_data = tr.load_split(val);
        const SplitData te_data = tr.load_split(test);
        auto acc = [&](const Matrix& enc) { return zeroshot_eval(enc, t, te_data.labels); };

        ojson accuracy, selections, metrics;
        std::map<std::string, Selection> sel;
        std::map<std::string, std::vector<UnitScore>> scores;
        for (ScoreMethod m : {ScoreMethod::U, ScoreMethod::UT, ScoreMethod::S}) {
            const std::string name(to_string(m));
            scores[name] = score_heads(tr_data, m, t, threads);
            sel[name] = select_topk(scores[name], fraction);
            accuracy[name] = acc(partial_output(sel[name], te_data).data);
            ojson units = ojson::array();
            for (const auto& u : sel[name].units) units.push_back(to_string(u));
            selections[name] = units;
        }

        std::vector<UnitId> heads;
        for (const auto* h : tr_data.heads()) heads.push_back(h->unit);
        const int k = sel["U"].k;
        std::vector<std::uint64_t> seeds;
        for (std::uint64_t i = 0; i < 10; ++i) seeds.push_back(derive_seed(seed, 100 + i));
        const auto randoms = random_selection(heads, k, seeds);
        double r_sum = 0.0, r_sq = 0.0;
        for (const auto& r : randoms) {
            const double a = acc(partial_output(r, te_data).data);
            r_sum += a;
            r_sq += a * a;
        }
        const double r_mean = r_sum / randoms.size();
        accuracy["R"] = r_mean;
        accuracy["R_std"] = std::sqrt(std::max(0.0, r_sq / randoms.size() - r_mean * r_mean));
        Selection all{heads, "H", static_cast<int>(heads.size())};
        accuracy["H"] = acc(partial_output(all, te_data).data);
        accuracy["B"] = acc(te_data.output().data);
        const UnitWeights uw = optimize_unit_weights(tr_data, va_data, t, oc);
        accuracy["O"] = acc(weighted_heads(te_data, uw.heads, uw.weights));

        auto csv = run.open("metrics.csv");
        csv << "method,accuracy\n";
        for (const char* m : {"U", "UT", "S", "R", "H", "B", "O"}) csv << m << ',' << fmt(accuracy[m].get<double>()) << '\n';
        auto sc = run.open("scores.csv");
        sc << "unit,layer,head,U,UT,S\n";
        for (std::size_t i = 0; i < heads.size(); ++i) {
            sc << to_string(heads[i]) << ',' << heads[i].layer << ',' << heads[i].index << ','
               << fmt(scores["U"][i].value) << ',' << fmt(scores["UT"][i].value) << ',' << fmt(scores["S"][i].value)
               << '\n';
        }

        metrics["n_heads"] = heads.size();
        metrics["k"] = k;
        metrics["accuracy"] = accuracy;
        metrics["selections"] = selections;
        metrics["jaccard"] = {{"U_UT", selection_jaccard(sel["U"], sel["UT"])},
                              {"U_S", selection_jaccard(sel["U"], sel["S"])},
                              {"UT_S", selection_jaccard(sel["UT"], sel["S"])}};
        metrics["O_training"] = history_json(uw.training);
        run.finish(o.echo(), metrics);
    }
};

// ---- residual fit / eval ----

struct RdParams {
    std::string variant = "RD", reference = "train";
    double evr = 0.9;
    bool include_embed = false, literal = false;

    void add(Options& o) {
        o.add("variant", variant, "RD, RD_star or RD_Y (fit also accepts Lin)");
        o.add("reference", reference, "split the PCA bases are fitted on");
        o.add("evr", evr, "EVR threshold for RD_star truncation");
        o.add_flag("include-embed", include_embed, "also rescale the embedding unit");
        o.add_flag("literal", literal, "do not add the unit means back after scaling");
    }

    RdConfig config() const {
        RdConfig c;
        c.variant = parse_rd_variant(variant);
        c.evr_truncation = evr;
        c.include_embed = include_embed;
        c.basis_source = reference;
        c.recenter = !literal;
        validate(c);
        return c;
    }
};

struct ResidualFitCmd {
    std::string trace, task, train = "train", val = "val", test = "test", out;
    std::uint64_t seed = 0;
    RdParams rp;
    TrainParams tp;

    void setup(CLI::App*, Options& o) {
        o.add("trace", trace, "trace directory or manifest");
        o.add("task", task, "task file (default: <trace>/task.json)");
        o.add("train-split", train, "training split");
        o.add("val-split", val, "early-stopping split");
        o.add("test-split", test, "reporting split");
        o.add("seed", seed, "random seed");
        rp.add(o);
        tp.add(o);
        o.add("out", out, "output directory");
    }

    void run(const Options& o) {
        const Trace tr = open_trace(trace);
        for (const auto& s : {train, val, test}) require_split(tr, s);
        const TaskSpec t = open_task(tr, task);
        const OptimConfig oc = tp.config(derive_seed(seed, 2));
        const bool lin = rp.variant == "Lin";
        const RdConfig rc = lin ? RdConfig{} : rp.config();
        if (!lin) require_split(tr, rc.basis_source);
        Run run("residual fit", out);

        const SplitData tr_data = tr.load_split(train);
        const SplitData va_data = tr.load_split(val);
        const SplitData te_data = tr.load_split(test);
        ojson metrics;
        metrics["variant"] = rp.variant;
        metrics["base_test_accuracy"] = zeroshot_eval(te_data.output().data, t, te_data.labels);
        const TrainResult* training = nullptr;
        LinearAligner la;
        ResidualFit fit;
        if (lin) {
            la = fit_linear_aligner(tr_data.output().data, tr_data.labels, va_data.output().data, va_data.labels, t, oc);
            training = &la.training;
            metrics["params"] = la.param_count();
            metrics["params_without_bias"] = la.param_count_without_bias();
            metrics["test_accuracy"] = zeroshot_eval(la.apply(te_data.output().data), t, te_data.labels);
            fs::create_directories(run.dir() / "linear");
            write_tensor(run.dir() / "linear" / "map.rdt", la.map);
            write_vector(run.dir() / "linear" / "bias.rdt", la.bias.transpose());
            run.note_output("linear/map.rdt");
            run.note_output("linear/bias.rdt");
        } else {
            const SplitData& ref = rc.basis_source == train ? tr_data : tr.load_split(rc.basis_source);
            const BasisMap bases = fit_rd_bases(ref, tr.manifest().n_layers, tr.manifest().heads_per_layer, rc);
            fit = fit_residual(tr_data, va_data, bases, t, rc, oc);
            training = &fit.training;
            metrics["params"] = rd_param_count(tr.manifest(), rc, &bases);
            metrics["params_formula"] = rd_param_count(tr.manifest(), rc);
            metrics["test_accuracy"] = zeroshot_eval(rd_output(te_data, bases, fit.lambdas, rc).data, t, te_data.labels);
            write_lambda_set(run.dir() / "lambdas", fit.lambdas);
            run.note_output("lambdas/index.json");
        }
        metrics["training"] = history_json(*training);
        auto csv = run.open("metrics.csv");
        write_training_log(csv, training->history);
        run.finish(o.echo(), metrics);
    }
};

struct ResidualEvalCmd {
    std::string trace, task, lambda = "ones", split = "test", out;
    RdParams rp;

    void setup(CLI::App*, Options& o) {
        o.add("trace", trace, "trace directory or manifest");
        o.add("task", task, "task file (default: <trace>/task.json)");
        o.add("lambda", lambda, "directory written by residual fit, or 'ones'");
        o.add("split", split, "evaluation split");
        rp.add(o);
        o.add("out", out, "output directory");
    }

    void run(const Options& o) {
        const Trace tr = open_trace(trace);
        require_split(tr, split);
        const RdConfig rc = rp.config();
        require_split(tr, rc.basis_source);
        const TaskSpec t = open_task(tr, task);
        Run run("residual eval", out);

        const SplitData ref = tr.load_split(rc.basis_source);
        const BasisMap bases = fit_rd_bases(ref, tr.manifest().n_layers, tr.manifest().heads_per_layer, rc);
        const LambdaSet lambdas =
            lambda == "ones" ? LambdaSet::ones(bases, rd_units(tr.manifest().n_layers, tr.manifest().heads_per_layer, rc),
                                               rc.recenter)
                             : read_lambda_set(lambda);
        const SplitData data = split == rc.basis_source ? ref : tr.load_split(split);
        const double acc = zeroshot_eval(rd_output(data, bases, lambdas, rc).data, t, data.labels);
        const double base = zeroshot_eval(data.output().data, t, data.labels);

        auto csv = run.open("metrics.csv");
        csv << "split,accuracy,base_accuracy\n" << split << ',' << fmt(acc) << ',' << fmt(base) << '\n';
        ojson metrics;
        metrics["variant"] = rp.variant;
        metrics["split"] = split;
        metrics["accuracy"] = acc;
        metrics["base_accuracy"] = base;
        metrics["params"] = lambdas.param_count();
        run.finish(o.echo(), metrics);
    }
};

// ---- report ----

struct ReportBase {
    std::string trace, task, split = "test", out;

    void setup(CLI::App*, Options& o) {
        o.add("trace", trace, "trace directory or manifest");
        o.add("task", task, "task file (default: <trace>/task.json)");
        o.add("split", split, "evaluation split");
        o.add("out", out, "output directory");
    }

    void run(const Options& o) {
        const Trace tr = open_trace(trace);
        require_split(tr, split);
        const TaskSpec t = open_task(tr, task);
        Run run("report base", out);
        const SplitData data = tr.load_split(split);
        std::vector<UnitId> heads;
        for (const auto* h : data.heads()) heads.push_back(h->unit);
        const double base = zeroshot_eval(data.output().data, t, data.labels);
        const double all_heads =
            zeroshot_eval(partial_output({heads, "H", static_cast<int>(heads.size())}, data).data, t, data.labels);
        auto csv = run.open("metrics.csv");
        csv << "split,base_accuracy,heads_accuracy\n" << split << ',' << fmt(base) << ',' << fmt(all_heads) << '\n';
        ojson metrics;
        metrics["split"] = split;
        metrics["n_samples"] = data.n_samples();
        metrics["base_accuracy"] = base;
        metrics["heads_accuracy"] = all_heads;
        run.finish(o.echo(), metrics);
    }
};

struct ReportTrace {
    std::string trace, out;

    void setup(CLI::App*, Options& o) {
        o.add("trace", trace, "trace directory or manifest");
        o.add("out", out, "output directory");
    }

    void run(const Options& o) {
        const Trace tr = open_trace(trace);
        Run run("report trace", out);
        const auto& m = tr.manifest();
        ojson splits = ojson::object();
        auto csv = run.open("metrics.csv");
        csv << "split,n_samples,n_units\n";
        for (const auto& [name, entries] : m.splits) {
            splits[name] = entries.front().n_samples;
            csv << name << ',' << entries.front().n_samples << ',' << entries.size() << '\n';
        }
        RdConfig rd, star, y;
        star.variant = RdVariant::RD_star;
        y.variant = RdVariant::RD_Y;
        ojson metrics;
        metrics["model_name"] = m.model_name;
        metrics["n_layers"] = m.n_layers;
        metrics["heads_per_layer"] = m.heads_per_layer;
        metrics["d_model"] = m.d_model;
        metrics["d_head"] = m.d_head;
        metrics["d_out"] = m.d_out;
        metrics["units_per_split"] = m.units_per_split();
        metrics["samples"] = splits;
        metrics["params"] = {{"RD", rd_param_count(m, rd)},
                             {"RD_star_max", rd_param_count(m, star)},
                             {"RD_Y", rd_param_count(m, y)},
                             {"Lin", static_cast<std::int64_t>(m.d_out) * m.d_out + m.d_out}};
        run.finish(o.echo(), metrics);
    }
};

template <class Cmd>
void add_command(CLI::App* parent, const std::string& name, const std::string& help, std::function<void()>& action) {
    CLI::App* sub = parent->add_subcommand(name, help);
    auto cmd = std::make_shared<Cmd>();
    auto opts = std::make_shared<Options>(sub);
    cmd->setup(sub, *opts);
    sub->callback([cmd, opts, &action] {
        action = [cmd, opts] {
            opts->apply_config();
            cmd->run(*opts);
        };
    });
}

}  // namespace

void register_commands(CLI::App& app, std::function<void()>& action) {
    auto* synth = app.add_subcommand("synth", "synthetic traces")->require_subcommand(1);
    add_command<SynthGen>(synth, "gen", "generate a synthetic trace", action);
    auto* profile = app.add_subcommand("profile", "spectral profiles")->require_subcommand(1);
    add_command<ProfileId>(profile, "id", "linear and TwoNN intrinsic dimension per unit", action);
    auto* pursuit = app.add_subcommand("pursuit", "sparse dictionary descriptions")->require_subcommand(1);
    add_command<PursuitRun>(pursuit, "run", "describe one unit with dictionary atoms", action);
    auto* sim = app.add_subcommand("similarity", "cross-dataset unit similarity")->require_subcommand(1);
    add_command<SimilarityGrid>(sim, "grid", "spectral cosine of every head against a reference split", action);
    auto* select = app.add_subcommand("select", "coarse unit selection")->require_subcommand(1);
    add_command<SelectCoarse>(select, "coarse", "score heads, select top-k and compare with baselines", action);
    auto* residual = app.add_subcommand("residual", "per-component spectral rescaling")->require_subcommand(1);
    add_command<ResidualFitCmd>(residual, "fit", "train scaling vectors (or the linear baseline)", action);
    add_command<ResidualEvalCmd>(residual, "eval", "evaluate stored or unit scaling vectors", action);
    auto* report = app.add_subcommand("report", "trace summaries")->require_subcommand(1);
    add_command<ReportBase>(report, "base", "zero-shot accuracy of the stored output", action);
    add_command<ReportTrace>(report, "trace", "manifest summary and parameter counts", action);
}

}  // namespace resid::cli
