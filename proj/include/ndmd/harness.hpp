#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ndmd/baselines.hpp"
#include "ndmd/dmdcore.hpp"
#include "ndmd/errors.hpp"
#include "ndmd/ndmd.hpp"
#include "ndmd/synthgen.hpp"

namespace ndmd {

/// Every model the experiment runner knows by name. The last three are
/// recognized so configs naming them fail with a clear out-of-scope error
/// instead of a parse error.
enum class ModelKind {
    ndmd,
    ndmd_aux,
    ndmdc,
    dmd,
    dmd_rank_r,
    dmdc,
    edmd,
    ar,
    nn_one_step,
    aear,
    lkis,
    kdmd,
    sdmd,
    lstm,
};

namespace detail {

struct KindName {
    ModelKind kind;
    const char* name;
};

inline const std::vector<KindName>& kind_names() {
    static const std::vector<KindName> table = {
        {ModelKind::kdmd, "KDMD"}, {ModelKind::sdmd, "SDMD"},  {ModelKind::lstm, "LSTM"},
        {ModelKind::ndmd, "NDMD"}, {ModelKind::ndmd_aux, "NDMDr"}, {ModelKind::ndmdc, "NDMDc"},
        {ModelKind::dmd, "DMD"},   {ModelKind::dmd_rank_r, "DMDr"}, {ModelKind::dmdc, "DMDc"},
        {ModelKind::edmd, "EDMD"}, {ModelKind::ar, "AR"},      {ModelKind::nn_one_step, "NN"},
        {ModelKind::aear, "AEAR"}, {ModelKind::lkis, "LKIS"},
    };
    return table;
}

inline std::string lowercase(std::string s) {
    for (char& c : s) c = char(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

}  // namespace detail

inline std::string to_string(ModelKind k) {
    for (const detail::KindName& e : detail::kind_names())
        if (e.kind == k) return e.name;
    throw contract_violation("to_string: unknown model kind");
}

inline ModelKind model_kind_from_string(const std::string& s) {
    const std::string key = detail::lowercase(s);
    for (const detail::KindName& e : detail::kind_names())
        if (detail::lowercase(e.name) == key) return e.kind;
    if (key == "ndmd+aux") return ModelKind::ndmd_aux;
    if (key == "dmd-rank-r") return ModelKind::dmd_rank_r;
    if (key == "nn-1step") return ModelKind::nn_one_step;
    throw io_error("model_kind_from_string: unknown model kind " + s);
}

inline bool kind_supported(ModelKind k) {
    return k != ModelKind::kdmd && k != ModelKind::sdmd && k != ModelKind::lstm;
}

inline bool is_ndmd_family(ModelKind k) {
    return k == ModelKind::ndmd || k == ModelKind::ndmd_aux || k == ModelKind::ndmdc;
}

/// Per-model knobs. rank 0 means truncate by singular value threshold; the
/// threshold comes from rank_threshold when nonnegative and from the shared
/// training config otherwise.
struct ModelSetup {
    ModelKind kind = ModelKind::ndmd;
    std::string label;  // display name, defaults to the kind name
    int lifted = 2;     // latent dimension of encoders (NDMD, AEAR, LKIS)
    int rank = 0;
    int rank_p = 0;     // stacked-matrix rank, control models only
    int exo_lifted = 1;
    int hidden = 64;
    double beta = 1.0;  // spectrum regularizer weight, NDMDr only
    double rank_threshold = -1.0;
};

inline std::string default_label(const ModelSetup& m) {
    if (!m.label.empty()) return m.label;
    if (m.kind == ModelKind::dmd_rank_r) return "DMD" + std::to_string(m.rank);
    return to_string(m.kind);
}

/// One model on one dataset. When data_path is set the dataset directory is
/// loaded as written by write_dataset; otherwise the latent recipe is rolled
/// forward and lifted through a GP draw seeded from the run seed.
struct ExperimentSpec {
    std::string name;  // dataset label recorded in every output
    LatentSystem latent;
    int obs_dim = 10;
    double gp_lengthscale = 1.0;
    double gp_variance = 1.0;
    double obs_noise = 0.0;  // sd of iid Gaussian measurement noise on the lift
    double f_train = 0.7;
    double f_val = 0.1;
    double f_test = 0.2;
    ModelSetup model;
    TrainConfig train;
    std::uint64_t seed = 0;
    std::string data_path;
    std::string out_dir;  // empty disables all file output
};

inline Split split_from_fractions(const ExperimentSpec& spec, long t_len) {
    require(spec.f_train >= 0.0 && spec.f_val >= 0.0 && spec.f_test >= 0.0,
            "split_from_fractions: negative split fraction");
    require(std::abs(spec.f_train + spec.f_val + spec.f_test - 1.0) <= 1e-9,
            "split_from_fractions: split fractions must sum to 1");
    Split s;
    s.train = long(std::floor(spec.f_train * double(t_len)));
    s.val = long(std::floor(spec.f_val * double(t_len)));
    s.test = t_len - s.train - s.val;
    require(s.train >= 4, "split_from_fractions: training window too short");
    return s;
}

namespace detail {

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Tags separating the independent random streams derived from one run seed.
constexpr std::uint64_t kGpTag = 0x67705f6c69667431ull;
constexpr std::uint64_t kExoTag = 0x65786f5f64726177ull;
constexpr std::uint64_t kInitTag = 0x6e65745f696e6974ull;
constexpr std::uint64_t kTrainTag = 0x747261696e5f7267ull;
constexpr std::uint64_t kNoiseTag = 0x6f62735f6e6f6973ull;

}  // namespace detail

/// Observation series plus everything evaluation needs: the ground-truth
/// spectrum, the chronological split, and the exogenous series when present.
struct Dataset {
    DatasetManifest manifest;
    RealMatrix series;  // obs_dim x T, original units
    RealMatrix exo;     // control_dim x (T - 1), empty when autonomous
    Split split;
};

inline Dataset load_dataset(const std::string& dir) {
    Dataset d;
    d.manifest = read_manifest(dir + "/manifest.json");
    d.series = read_series_csv(dir + "/" + d.manifest.series_file);
    require(d.series.rows == d.manifest.obs_dim && long(d.series.cols) == d.manifest.t_len,
            "load_dataset: series shape disagrees with the manifest");
    if (!d.manifest.control_file.empty()) {
        d.exo = read_series_csv(dir + "/" + d.manifest.control_file);
        require(d.exo.rows == d.manifest.control_dim && long(d.exo.cols) == d.manifest.t_len - 1,
                "load_dataset: exogenous series shape disagrees with the manifest");
    }
    d.split = Split{d.manifest.train_len, d.manifest.val_len, d.manifest.test_len};
    require(d.split.train + d.split.val + d.split.test == d.manifest.t_len,
            "load_dataset: split lengths do not cover the series");
    return d;
}

inline Dataset build_dataset(const ExperimentSpec& spec) {
    if (!spec.data_path.empty()) return load_dataset(spec.data_path);
    require(!spec.latent.a.empty() && spec.latent.t_len >= 8,
            "build_dataset: spec has neither a data path nor a usable latent recipe");
    Dataset d;
    const bool control = !spec.latent.b.empty();
    if (control)
        d.exo = gen_control_series(spec.latent.b.cols, spec.latent.t_len - 1,
                                   mix64(spec.seed, detail::kExoTag));
    const RealMatrix latent = propagate_linear(spec.latent, control ? &d.exo : nullptr);
    GpLiftSpec lift;
    lift.out_dim = spec.obs_dim;
    lift.lengthscale = spec.gp_lengthscale;
    lift.variance = spec.gp_variance;
    lift.seed = mix64(spec.seed, detail::kGpTag);
    d.series = gp_lift(latent, lift);
    if (spec.obs_noise > 0.0) {
        Rng noise(mix64(spec.seed, detail::kNoiseTag));
        for (double& v : d.series.data) v += spec.obs_noise * noise.normal();
    }
    d.split = split_from_fractions(spec, spec.latent.t_len);

    d.manifest.name = spec.name;
    d.manifest.seed = spec.seed;
    d.manifest.t_len = spec.latent.t_len;
    d.manifest.latent_dim = spec.latent.a.rows;
    d.manifest.obs_dim = spec.obs_dim;
    d.manifest.control_dim = control ? spec.latent.b.cols : 0;
    d.manifest.train_len = d.split.train;
    d.manifest.val_len = d.split.val;
    d.manifest.test_len = d.split.test;
    d.manifest.true_eigenvalues = true_spectrum(spec.latent.a);
    d.manifest.series_file = "series.csv";
    d.manifest.control_file = control ? "exo.csv" : "";
    return d;
}

inline void write_dataset(const Dataset& d, const std::string& dir) {
    std::filesystem::create_directories(dir);
    write_series_csv(d.series, dir + "/" + d.manifest.series_file);
    if (!d.manifest.control_file.empty())
        write_series_csv(d.exo, dir + "/" + d.manifest.control_file, "u");
    write_manifest(d.manifest, dir + "/manifest.json");
}

/// One trained model's scorecard. test_mse is absent when the dataset has no
/// test split, chamfer when the model reports no spectrum.
struct ResultRecord {
    std::string model;
    std::uint64_t seed = 0;
    std::vector<complexd> eigenvalues;
    std::optional<double> test_mse;
    std::optional<double> chamfer;
    double runtime_seconds = 0.0;
    std::string config_hash;
};

/// runtime_seconds is the one field that legitimately differs between
/// reruns, so writers that feed determinism checks drop it.
inline nlohmann::json record_to_json(const ResultRecord& r, bool include_runtime = true) {
    nlohmann::json eigs = nlohmann::json::array();
    for (const complexd& l : r.eigenvalues)
        eigs.push_back(nlohmann::json{{"real", l.real()}, {"imag", l.imag()}});
    nlohmann::json j{{"model", r.model},
                     {"seed", r.seed},
                     {"eigenvalues", eigs},
                     {"test_mse", r.test_mse ? nlohmann::json(*r.test_mse) : nlohmann::json()},
                     {"chamfer", r.chamfer ? nlohmann::json(*r.chamfer) : nlohmann::json()},
                     {"config_hash", r.config_hash}};
    if (include_runtime) j["runtime_seconds"] = r.runtime_seconds;
    return j;
}

inline ResultRecord record_from_json(const nlohmann::json& j) {
    ResultRecord r;
    r.model = j.at("model").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("eigenvalues"))
        r.eigenvalues.emplace_back(e.at("real").get<double>(), e.at("imag").get<double>());
    if (!j.at("test_mse").is_null()) r.test_mse = j.at("test_mse").get<double>();
    if (!j.at("chamfer").is_null()) r.chamfer = j.at("chamfer").get<double>();
    if (j.contains("runtime_seconds")) r.runtime_seconds = j.at("runtime_seconds").get<double>();
    r.config_hash = j.at("config_hash").get<std::string>();
    return r;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    return nlohmann::json{{"batch", c.batch},           {"lr", c.lr},
                          {"dropout", c.dropout},       {"max_epochs", c.max_epochs},
                          {"patience", c.patience},     {"restarts", c.restarts},
                          {"warmup", c.warmup},         {"seed", c.seed},
                          {"beta", c.beta},             {"rank_threshold", c.rank_threshold}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.batch = j.at("batch").get<int>();
    c.lr = j.at("lr").get<double>();
    c.dropout = j.at("dropout").get<double>();
    c.max_epochs = j.at("max_epochs").get<int>();
    c.patience = j.at("patience").get<int>();
    c.restarts = j.at("restarts").get<int>();
    c.warmup = j.at("warmup").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.beta = j.at("beta").get<double>();
    c.rank_threshold = j.at("rank_threshold").get<double>();
    return c;
}

/// Stable digest of everything that determines a run except the seed, so
/// reruns and the generate-then-train path can be recognized as the same
/// configuration. Output paths do not participate.
inline std::string config_hash(const ExperimentSpec& spec, const Dataset& d) {
    const ModelSetup& m = spec.model;
    nlohmann::json j{
        {"name", d.manifest.name},
        {"obs_dim", d.manifest.obs_dim},
        {"t_len", d.manifest.t_len},
        {"control_dim", d.manifest.control_dim},
        {"split", {{"train", d.split.train}, {"val", d.split.val}, {"test", d.split.test}}},
        {"model",
         {{"kind", to_string(m.kind)},
          {"label", default_label(m)},
          {"lifted", m.lifted},
          {"rank", m.rank},
          {"rank_p", m.rank_p},
          {"exo_lifted", m.exo_lifted},
          {"hidden", m.hidden},
          {"beta", m.beta},
          {"rank_threshold", m.rank_threshold}}},
        {"train",
         {{"batch", spec.train.batch},
          {"lr", spec.train.lr},
          {"dropout", spec.train.dropout},
          {"max_epochs", spec.train.max_epochs},
          {"patience", spec.train.patience},
          {"restarts", spec.train.restarts},
          {"warmup", spec.train.warmup},
          {"beta", spec.train.beta},
          {"rank_threshold", spec.train.rank_threshold}}}};
    return detail::hash_hex(detail::fnv1a64(j.dump()));
}

namespace detail {

inline RankSpec setup_rank(int rank, double own_threshold, double shared_threshold) {
    if (rank > 0) return RankSpec::fixed(rank);
    return RankSpec::threshold(own_threshold >= 0.0 ? own_threshold : shared_threshold);
}

/// Mean squared entrywise error of a normalized-units forecast against the
/// original series over [anchor, anchor + horizon).
inline double original_units_mse(const RealMatrix& fc_norm, const Normalization& norm,
                                 const RealMatrix& series, long anchor) {
    const RealMatrix fc = norm.invert(fc_norm);
    require(anchor + fc.cols <= series.cols, "original_units_mse: forecast runs past the series");
    double s = 0.0;
    for (int i = 0; i < fc.rows; ++i)
        for (int j = 0; j < fc.cols; ++j) {
            const double d = fc(i, j) - series(i, int(anchor) + j);
            s += d * d;
        }
    return s / (double(fc.rows) * double(fc.cols));
}

inline double median(std::vector<double> v) {
    require(!v.empty(), "median: empty sample");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    if (n % 2 == 1) return v[n / 2];
    return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// Construct and fit one reference forecaster on the normalized series.
/// Covers the non-gradient and gradient baselines alike; the NDMD variants
/// and raw-state DMDc have their own paths in run_experiment.
inline std::unique_ptr<Forecaster> fit_baseline(const ModelSetup& setup, const RealMatrix& series,
                                                const Split& split, const TrainConfig& config) {
    if (!kind_supported(setup.kind))
        throw unsupported_model("fit_baseline: " + to_string(setup.kind) + " is out of scope");
    require(!is_ndmd_family(setup.kind) && setup.kind != ModelKind::dmdc,
            "fit_baseline: not a reference baseline kind");
    const RankSpec rank =
        detail::setup_rank(setup.rank, setup.rank_threshold, config.rank_threshold);
    std::unique_ptr<Forecaster> f;
    switch (setup.kind) {
        case ModelKind::dmd:
            f = std::make_unique<DmdForecaster>(rank, default_label(setup));
            break;
        case ModelKind::dmd_rank_r:
            require(setup.rank > 0, "fit_baseline: DMDr needs a positive rank");
            f = std::make_unique<DmdForecaster>(RankSpec::fixed(setup.rank), default_label(setup));
            break;
        case ModelKind::edmd:
            f = std::make_unique<EdmdForecaster>(rank, default_label(setup));
            break;
        case ModelKind::ar:
            f = std::make_unique<ArForecaster>();
            break;
        case ModelKind::nn_one_step:
            f = std::make_unique<NnForecaster>(setup.hidden, config);
            break;
        case ModelKind::aear:
            f = std::make_unique<AeArForecaster>(setup.lifted, setup.hidden, config);
            break;
        case ModelKind::lkis:
            f = std::make_unique<LkisForecaster>(setup.lifted, setup.hidden, config);
            break;
        default:
            throw contract_violation("fit_baseline: unhandled kind");
    }
    f->fit(series, split);
    return f;
}

namespace detail {

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw io_error("write_text_file: cannot open " + path);
    out << text;
    if (!out) throw io_error("write_text_file: write failed for " + path);
}

inline nlohmann::json split_to_json(const Split& s) {
    return nlohmann::json{{"train", s.train}, {"val", s.val}, {"test", s.test}};
}

inline Split split_from_json(const nlohmann::json& j) {
    return Split{j.at("train").get<long>(), j.at("val").get<long>(), j.at("test").get<long>()};
}

/// Train from several independent inits and keep the model with the best
/// holdout loss. make builds a freshly initialized model from an Rng, fit
/// trains it in place and returns the report. Without a validation split
/// the last training loss breaks ties, which a single try makes moot.
template <typename MakeFn, typename FitFn>
std::pair<NdmdModel, TrainReport> train_best_of(const TrainConfig& cfg, std::uint64_t init_seed,
                                                long val_len, MakeFn&& make, FitFn&& fit) {
    const int tries = val_len > 0 ? std::max(1, cfg.restarts) : 1;
    double best_score = std::numeric_limits<double>::infinity();
    std::pair<NdmdModel, TrainReport> best;
    for (int r = 0; r < tries; ++r) {
        Rng rng(restart_seed(init_seed, r));
        NdmdModel model = make(rng);
        TrainConfig c = cfg;
        c.seed = restart_seed(cfg.seed, r);
        const TrainReport rep = fit(model, c);
        const double score =
            rep.val_losses.empty()
                ? (rep.train_losses.empty() ? 0.0 : rep.train_losses.back())
                : *std::min_element(rep.val_losses.begin(), rep.val_losses.end());
        if (r == 0 || score < best_score) {
            best_score = score;
            best.first = std::move(model);
            best.second = rep;
        }
    }
    return best;
}

/// Spectrum, and forecast error when a test split exists, shared by the
/// experiment path and checkpoint re-evaluation so both report identical
/// numbers.
inline void fill_ndmd_evaluation(ResultRecord& rec, const NdmdModel& model,
                                 const RealMatrix& series_n, const Dataset& d,
                                 const Normalization& norm, const TrainConfig& cfg) {
    const long anchor = d.split.train + d.split.val;
    const RealMatrix* exo = model.has_control ? &d.exo : nullptr;
    rec.eigenvalues = fitted_eigenvalues(model, series_n, anchor, cfg, exo);
    if (d.split.test > 0) {
        const RealMatrix fc = forecast_horizon(model, series_n, anchor, d.split.test, cfg, exo);
        rec.test_mse = original_units_mse(fc, norm, d.series, anchor);
    }
}

}  // namespace detail

/// Everything needed to re-evaluate a trained NDMD-family model later:
/// parameters, the normalization it was trained under, the split, and the
/// training config whose rank threshold the spectral fit depends on.
struct Checkpoint {
    std::string label;
    std::uint64_t seed = 0;
    std::string config_hash;
    TrainConfig train;
    Split split;
    Normalization norm;
    NdmdModel model;
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
    return nlohmann::json{{"label", c.label},
                          {"seed", c.seed},
                          {"config_hash", c.config_hash},
                          {"train", train_config_to_json(c.train)},
                          {"split", detail::split_to_json(c.split)},
                          {"normalization", c.norm.to_json()},
                          {"model", model_to_json(c.model)}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    Checkpoint c;
    c.label = j.at("label").get<std::string>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.config_hash = j.at("config_hash").get<std::string>();
    c.train = train_config_from_json(j.at("train"));
    c.split = detail::split_from_json(j.at("split"));
    c.norm = Normalization::from_json(j.at("normalization"));
    c.model = model_from_json(j.at("model"));
    return c;
}

inline void write_checkpoint(const Checkpoint& c, const std::string& path) {
    detail::write_text_file(path, checkpoint_to_json(c).dump(2) + "\n");
}

inline Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("read_checkpoint: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw io_error(std::string("read_checkpoint: parse failure: ") + e.what());
    }
    return checkpoint_from_json(j);
}

/// Recompute a checkpoint's scorecard on a dataset. Reproduces the record
/// the training run emitted, minus the runtime.
inline ResultRecord evaluate_checkpoint(const Checkpoint& c, const Dataset& d) {
    require(c.split.train == d.split.train && c.split.val == d.split.val &&
                c.split.test == d.split.test,
            "evaluate_checkpoint: dataset split disagrees with the checkpoint");
    require(d.series.rows == c.model.encoder_spec.dims.front(),
            "evaluate_checkpoint: dataset dimension disagrees with the checkpoint");
    ResultRecord rec;
    rec.model = c.label;
    rec.seed = c.seed;
    rec.config_hash = c.config_hash;
    const RealMatrix series_n = c.norm.apply(d.series);
    detail::fill_ndmd_evaluation(rec, c.model, series_n, d, c.norm, c.train);
    if (!d.manifest.true_eigenvalues.empty() && !rec.eigenvalues.empty())
        rec.chamfer = chamfer_eig(rec.eigenvalues, d.manifest.true_eigenvalues);
    return rec;
}

/// Run one model on one dataset end to end: generate or load, normalize on
/// the training window, fit, evaluate on the test horizon in original units,
/// and persist artifacts under out_dir when one is given. Training failures
/// leave a diagnostic file behind and propagate.
inline ResultRecord run_experiment(const ExperimentSpec& spec) {
    const ModelSetup& setup = spec.model;
    if (!kind_supported(setup.kind))
        throw unsupported_model("run_experiment: " + to_string(setup.kind) + " is out of scope");

    const Dataset d = build_dataset(spec);
    const std::string label = default_label(setup);
    std::string run_dir;
    if (!spec.out_dir.empty()) {
        run_dir = spec.out_dir + "/runs/" + label + "-seed" + std::to_string(spec.seed);
        std::filesystem::create_directories(run_dir);
        if (spec.data_path.empty())
            write_dataset(d, spec.out_dir + "/data/seed" + std::to_string(spec.seed));
    }

    const Normalization norm = Normalization::fit(d.series, 0, int(d.split.train));
    const RealMatrix series_n = norm.apply(d.series);
    const long anchor = d.split.train + d.split.val;

    const std::uint64_t salt = detail::fnv1a64(label);
    TrainConfig cfg = spec.train;
    cfg.seed = mix64(spec.seed, detail::kTrainTag ^ salt);
    cfg.beta = setup.beta;
    const std::uint64_t init_seed = mix64(spec.seed, detail::kInitTag ^ salt);

    ResultRecord rec;
    rec.model = label;
    rec.seed = spec.seed;
    rec.config_hash = config_hash(spec, d);

    const auto t0 = std::chrono::steady_clock::now();
    try {
        switch (setup.kind) {
            case ModelKind::ndmd:
            case ModelKind::ndmd_aux: {
                const bool with_aux = setup.kind == ModelKind::ndmd_aux;
                if (with_aux)
                    require(!d.manifest.true_eigenvalues.empty(),
                            "run_experiment: NDMDr needs a target spectrum in the manifest");
                const AuxEigenvalues aux{d.manifest.true_eigenvalues};
                auto [model, rep] = detail::train_best_of(
                    cfg, init_seed, d.split.val,
                    [&](Rng& rng) {
                        return make_ndmd_model(d.series.rows, setup.lifted, setup.rank,
                                               setup.hidden, rng);
                    },
                    [&](NdmdModel& m, const TrainConfig& c) {
                        return with_aux ? train_with_aux(m, series_n, d.split, c, &aux)
                                        : train(m, series_n, d.split, c);
                    });
                detail::fill_ndmd_evaluation(rec, model, series_n, d, norm, cfg);
                if (!run_dir.empty()) {
                    write_checkpoint(
                        Checkpoint{label, spec.seed, rec.config_hash, cfg, d.split, norm, model},
                        run_dir + "/checkpoint.json");
                    detail::write_text_file(
                        run_dir + "/train_report.json",
                        nlohmann::json{{"train_losses", rep.train_losses},
                                       {"val_losses", rep.val_losses},
                                       {"epochs_run", rep.epochs_run},
                                       {"best_epoch", rep.best_epoch}}
                                .dump(2) +
                            "\n");
                }
                break;
            }
            case ModelKind::ndmdc: {
                require(!d.exo.empty(), "run_experiment: NDMDc needs an exogenous series");
                auto [model, rep] = detail::train_best_of(
                    cfg, init_seed, d.split.val,
                    [&](Rng& rng) {
                        return make_ndmdc_model(d.series.rows, d.exo.rows, setup.lifted,
                                                setup.exo_lifted, setup.rank, setup.rank_p,
                                                setup.hidden, rng);
                    },
                    [&](NdmdModel& m, const TrainConfig& c) {
                        return train_control(m, series_n, d.exo, d.split, c);
                    });
                detail::fill_ndmd_evaluation(rec, model, series_n, d, norm, cfg);
                if (!run_dir.empty()) {
                    write_checkpoint(
                        Checkpoint{label, spec.seed, rec.config_hash, cfg, d.split, norm, model},
                        run_dir + "/checkpoint.json");
                    detail::write_text_file(
                        run_dir + "/train_report.json",
                        nlohmann::json{{"train_losses", rep.train_losses},
                                       {"val_losses", rep.val_losses},
                                       {"epochs_run", rep.epochs_run},
                                       {"best_epoch", rep.best_epoch}}
                                .dump(2) +
                            "\n");
                }
                break;
            }
            case ModelKind::dmdc: {
                require(!d.exo.empty(), "run_experiment: DMDc needs an exogenous series");
                const RankSpec rank_p = detail::setup_rank(setup.rank_p, setup.rank_threshold,
                                                           cfg.rank_threshold);
                const RankSpec rank_r =
                    detail::setup_rank(setup.rank, setup.rank_threshold, cfg.rank_threshold);
                ControlModel cm = dmdc_fit(col_slice(series_n, 0, int(anchor - 1)),
                                           col_slice(series_n, 1, int(anchor)),
                                           col_slice(d.exo, 0, int(anchor - 1)), rank_p, rank_r);
                reanchor(cm, RealMatrix::col_vector(col_of(series_n, int(anchor - 1))), anchor);
                rec.eigenvalues = cm.lambdas;
                if (d.split.test > 0) {
                    RealMatrix fc(d.series.rows, int(d.split.test));
                    for (long h = 1; h <= d.split.test; ++h) {
                        const ComplexMatrix v = dmdc_forecast(cm, d.exo, anchor + h);
                        for (int i = 0; i < fc.rows; ++i) fc(i, int(h - 1)) = v(i, 0).real();
                    }
                    rec.test_mse = detail::original_units_mse(fc, norm, d.series, anchor);
                }
                break;
            }
            default: {
                const std::unique_ptr<Forecaster> f = fit_baseline(setup, series_n, d.split, cfg);
                rec.eigenvalues = f->eigenvalues();
                if (d.split.test > 0) {
                    const RealMatrix fc = f->forecast(d.split.test);
                    rec.test_mse = detail::original_units_mse(fc, norm, d.series, anchor);
                }
                break;
            }
        }
    } catch (const std::exception& e) {
        if (!run_dir.empty())
            detail::write_text_file(run_dir + "/failure.json",
                                    nlohmann::json{{"model", label},
                                                   {"seed", spec.seed},
                                                   {"config_hash", rec.config_hash},
                                                   {"error", e.what()}}
                                            .dump(2) +
                                        "\n");
        throw;
    }
    rec.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (!d.manifest.true_eigenvalues.empty() && !rec.eigenvalues.empty())
        rec.chamfer = chamfer_eig(rec.eigenvalues, d.manifest.true_eigenvalues);
    if (rec.test_mse) require(*rec.test_mse >= 0.0, "run_experiment: negative test MSE");

    if (!run_dir.empty())
        detail::write_text_file(run_dir + "/record.json", record_to_json(rec).dump(2) + "\n");
    return rec;
}

inline void write_results_json(const std::vector<ResultRecord>& records, const std::string& path) {
    nlohmann::json arr = nlohmann::json::array();
    for (const ResultRecord& r : records) arr.push_back(record_to_json(r, false));
    detail::write_text_file(path, arr.dump(2) + "\n");
}

inline std::vector<ResultRecord> read_results_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("read_results_json: cannot open " + path);
    nlohmann::json arr;
    try {
        in >> arr;
    } catch (const std::exception& e) {
        throw io_error(std::string("read_results_json: parse failure: ") + e.what());
    }
    require(arr.is_array(), "read_results_json: top level must be an array");
    std::vector<ResultRecord> records;
    for (const auto& j : arr) records.push_back(record_from_json(j));
    return records;
}

inline void write_eigenvalue_csv(const std::vector<ResultRecord>& records,
                                 const std::string& path) {
    std::string text = "model,seed,real,imag\n";
    for (const ResultRecord& r : records)
        for (const complexd& l : r.eigenvalues)
            text += r.model + "," + std::to_string(r.seed) + "," +
                    detail::format_double(l.real()) + "," + detail::format_double(l.imag()) + "\n";
    detail::write_text_file(path, text);
}

/// Scatter-plot friendly layout with the coordinates first.
inline void write_eigenplot_csv(const std::vector<ResultRecord>& records,
                                const std::string& path) {
    std::string text = "real,imag,model\n";
    for (const ResultRecord& r : records)
        for (const complexd& l : r.eigenvalues)
            text += detail::format_double(l.real()) + "," + detail::format_double(l.imag()) + "," +
                    r.model + "\n";
    detail::write_text_file(path, text);
}

inline void write_report_md(const std::vector<ResultRecord>& records, const std::string& name,
                            const std::string& path) {
    std::map<std::string, std::vector<const ResultRecord*>> by_model;
    for (const ResultRecord& r : records) by_model[r.model].push_back(&r);
    std::string text = "# Experiment report: " + name + "\n\n";
    text += "| model | runs | median chamfer | median test MSE | median seconds |\n";
    text += "|---|---|---|---|---|\n";
    const auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.6g", v);
        return std::string(buf);
    };
    for (const auto& [model, rs] : by_model) {
        std::vector<double> chamfers, mses, secs;
        for (const ResultRecord* r : rs) {
            if (r->chamfer) chamfers.push_back(*r->chamfer);
            if (r->test_mse) mses.push_back(*r->test_mse);
            secs.push_back(r->runtime_seconds);
        }
        text += "| " + model + " | " + std::to_string(rs.size()) + " | " +
                (chamfers.empty() ? "n/a" : fmt(detail::median(chamfers))) + " | " +
                (mses.empty() ? "n/a" : fmt(detail::median(mses))) + " | " +
                fmt(detail::median(secs)) + " |\n";
    }
    detail::write_text_file(path, text);
}

/// Fan one base spec out over models and consecutive seeds, sequentially and
/// in a deterministic order. Writes the aggregate results.json (runtime
/// excluded so reruns are byte-identical), eigenvalues.csv, and report.md
/// when the base spec has an output directory.
inline std::vector<ResultRecord> run_suite(const ExperimentSpec& base,
                                           const std::vector<ModelSetup>& models,
                                           std::uint64_t base_seed, int n_seeds) {
    require(!models.empty(), "run_suite: no models given");
    require(n_seeds >= 1, "run_suite: need at least one seed");
    std::vector<ResultRecord> records;
    for (const ModelSetup& m : models)
        for (int k = 0; k < n_seeds; ++k) {
            ExperimentSpec spec = base;
            spec.model = m;
            spec.seed = base_seed + std::uint64_t(k);
            records.push_back(run_experiment(spec));
        }
    std::sort(records.begin(), records.end(), [](const ResultRecord& a, const ResultRecord& b) {
        return a.model != b.model ? a.model < b.model : a.seed < b.seed;
    });
    if (!base.out_dir.empty()) {
        std::filesystem::create_directories(base.out_dir);
        write_results_json(records, base.out_dir + "/results.json");
        write_eigenvalue_csv(records, base.out_dir + "/eigenvalues.csv");
        write_report_md(records, base.name, base.out_dir + "/report.md");
    }
    return records;
}

inline RealMatrix preset_spiral_a() {
    return RealMatrix::from_rows({{0.9, -0.5}, {0.4, 0.9}});
}

inline RealMatrix preset_block_a() {
    return RealMatrix::from_rows({{0.9, -0.5, 0.0, 0.0},
                                  {0.4, 0.9, 0.0, 0.0},
                                  {0.0, 0.0, 0.8, -0.5},
                                  {0.0, 0.0, 0.6, 0.8}});
}

/// Named experiment recipes. 5.1 estimates a spiral spectrum from lifted
/// observations, 5.2 adds a decaying second block and a known-spectrum
/// regularizer, 5.3 drives the spiral with white noise through a control
/// channel, and 5.4-M sweeps the observation count over a sustained
/// oscillation at M in {20, 60, 200}.
inline ExperimentSpec preset_spec(const std::string& preset) {
    ExperimentSpec s;
    s.name = preset;
    s.obs_dim = 10;
    if (preset == "5.1") {
        s.latent.a = preset_spiral_a();
        s.latent.psi0 = RealMatrix::from_rows({{1.0}, {0.4}});
        s.latent.t_len = 80;
        s.f_train = 0.875;
        s.f_val = 0.125;
        s.f_test = 0.0;
    } else if (preset == "5.2") {
        s.latent.a = preset_block_a();
        s.latent.psi0 = RealMatrix::from_rows({{1.0}, {0.4}, {1.0}, {0.4}});
        s.latent.t_len = 100;
    } else if (preset == "5.3") {
        s.latent.a = preset_spiral_a();
        s.latent.b = RealMatrix::from_rows({{1.0}, {0.0}});
        s.latent.psi0 = RealMatrix::from_rows({{1.0}, {0.4}});
        s.latent.t_len = 160;
        s.f_train = 0.875;
        s.f_val = 0.125;
        s.f_test = 0.0;
    } else if (preset.rfind("5.4-", 0) == 0) {
        const std::string suffix = preset.substr(4);
        std::size_t used = 0;
        int m = 0;
        try {
            m = std::stoi(suffix, &used);
        } catch (const std::exception&) {
            throw io_error("preset_spec: bad observation count in " + preset);
        }
        if (used != suffix.size() || m < 2)
            throw io_error("preset_spec: bad observation count in " + preset);
        // The spiral scaled to unit modulus, a pure oscillation.
        const double mod = std::sqrt(1.01);
        RealMatrix a = preset_spiral_a();
        for (double& v : a.data) v /= mod;
        s.latent.a = a;
        s.latent.psi0 = RealMatrix::from_rows({{1.0}, {0.4}});
        s.latent.t_len = 151;
        s.obs_dim = m;
        s.obs_noise = 0.05;  // measurement noise, the regime rank truncation exists for
        // Noisy snapshots make the spectral objective basin-sensitive, so
        // gradient models take the best of a few inits by holdout loss.
        // Dropout noise on a two-unit code destabilizes the eigensolve.
        s.train.dropout = 0.0;
        s.train.restarts = 3;
    } else {
        throw io_error("preset_spec: unknown preset " + preset);
    }
    return s;
}

inline std::vector<ModelSetup> preset_models(const std::string& preset) {
    const auto make = [](ModelKind kind, std::string label) {
        ModelSetup m;
        m.kind = kind;
        m.label = std::move(label);
        return m;
    };
    if (preset == "5.1") {
        ModelSetup ndmd = make(ModelKind::ndmd, "NDMD");
        ndmd.lifted = 2;
        ndmd.rank = 2;
        ModelSetup dmd = make(ModelKind::dmd, "DMD");
        dmd.rank = 10;
        ModelSetup dmd2 = make(ModelKind::dmd_rank_r, "DMD2");
        dmd2.rank = 2;
        return {ndmd, dmd, dmd2};
    }
    if (preset == "5.2") {
        ModelSetup ndmd = make(ModelKind::ndmd, "NDMD");
        ndmd.lifted = 4;
        ndmd.rank = 4;
        ModelSetup reg = make(ModelKind::ndmd_aux, "NDMDr");
        reg.lifted = 4;
        reg.rank = 4;
        reg.beta = 1.0;
        return {ndmd, reg};
    }
    if (preset == "5.3") {
        ModelSetup ndmdc = make(ModelKind::ndmdc, "NDMDc");
        ndmdc.lifted = 2;
        ndmdc.rank = 2;
        ndmdc.rank_p = 3;
        ndmdc.exo_lifted = 1;
        ModelSetup ndmd = make(ModelKind::ndmd, "NDMD");
        ndmd.lifted = 2;
        ndmd.rank = 2;
        ModelSetup dmdc = make(ModelKind::dmdc, "DMDc");
        dmdc.rank = 10;
        dmdc.rank_p = 11;
        ModelSetup dmdc2 = make(ModelKind::dmdc, "DMDc2");
        dmdc2.rank = 2;
        dmdc2.rank_p = 3;
        return {ndmdc, ndmd, dmdc, dmdc2};
    }
    if (preset.rfind("5.4-", 0) == 0) {
        ModelSetup ndmd = make(ModelKind::ndmd, "NDMD");
        ndmd.lifted = 2;
        ndmd.rank = 0;  // singular value threshold from the training config
        ModelSetup dmd = make(ModelKind::dmd, "DMD");
        dmd.rank = 0;
        dmd.rank_threshold = 1e-10;  // numerical full rank
        ModelSetup edmd = make(ModelKind::edmd, "EDMD");
        edmd.rank = 0;
        edmd.rank_threshold = 1e-10;
        ModelSetup nn = make(ModelKind::nn_one_step, "NN");
        ModelSetup aear = make(ModelKind::aear, "AEAR");
        aear.lifted = 8;
        ModelSetup lkis = make(ModelKind::lkis, "LKIS");
        lkis.lifted = 8;
        return {ndmd, dmd, edmd, make(ModelKind::ar, "AR"), nn, aear, lkis};
    }
    throw io_error("preset_models: unknown preset " + preset);
}

/// Plain `key value` lines with # comments. Later occurrences of a key win.
inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("parse_config_file: cannot open " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        std::string key, value, extra;
        if (!(ss >> key)) continue;
        if (!(ss >> value) || (ss >> extra))
            throw io_error("parse_config_file: expected `key value` on line " +
                           std::to_string(line_no) + " of " + path);
        kv[key] = value;
    }
    return kv;
}

namespace detail {

inline double config_double(const std::string& key, const std::string& value) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(value, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != value.size()) throw io_error("config: bad numeric value for " + key);
    return v;
}

inline long config_long(const std::string& key, const std::string& value) {
    std::size_t used = 0;
    long v = 0;
    try {
        v = std::stol(value, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != value.size()) throw io_error("config: bad integer value for " + key);
    return v;
}

}  // namespace detail

/// Apply overrides onto a spec and its model setup. Run-level keys (model,
/// preset, seed, seeds) are the caller's business and must already be
/// removed; anything unrecognized here is an error rather than a silent typo.
inline void apply_config(const std::map<std::string, std::string>& kv, ExperimentSpec& spec,
                         ModelSetup& setup) {
    for (const auto& [key, value] : kv) {
        if (key == "hidden") setup.hidden = int(detail::config_long(key, value));
        else if (key == "lifted") setup.lifted = int(detail::config_long(key, value));
        else if (key == "rank") setup.rank = int(detail::config_long(key, value));
        else if (key == "rank_p") setup.rank_p = int(detail::config_long(key, value));
        else if (key == "exo_lifted") setup.exo_lifted = int(detail::config_long(key, value));
        else if (key == "beta") setup.beta = detail::config_double(key, value);
        else if (key == "model_rank_threshold")
            setup.rank_threshold = detail::config_double(key, value);
        else if (key == "lr") spec.train.lr = detail::config_double(key, value);
        else if (key == "batch") spec.train.batch = int(detail::config_long(key, value));
        else if (key == "dropout") spec.train.dropout = detail::config_double(key, value);
        else if (key == "max_epochs") spec.train.max_epochs = int(detail::config_long(key, value));
        else if (key == "patience") spec.train.patience = int(detail::config_long(key, value));
        else if (key == "restarts") spec.train.restarts = int(detail::config_long(key, value));
        else if (key == "warmup") spec.train.warmup = int(detail::config_long(key, value));
        else if (key == "rank_threshold")
            spec.train.rank_threshold = detail::config_double(key, value);
        else if (key == "obs_dim") spec.obs_dim = int(detail::config_long(key, value));
        else if (key == "obs_noise") spec.obs_noise = detail::config_double(key, value);
        else if (key == "name") spec.name = value;
        else if (key == "data") spec.data_path = value;
        else if (key == "out") spec.out_dir = value;
        else throw io_error("apply_config: unknown config key " + key);
    }
}

}  // namespace ndmd
