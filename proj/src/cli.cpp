#include "dkps/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include "dkps/error.hpp"
#include "dkps/eval.hpp"
#include "dkps/geometry.hpp"
#include "dkps/inference.hpp"
#include "dkps/io.hpp"
#include "dkps/panel.hpp"
#include "dkps/service.hpp"
#include "dkps/simulate.hpp"

namespace dkps::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string> kNormalizations = {"per_query", "root_query", "none"};
const std::vector<std::string> kMethods = {"global-mean", "knn-graph", "knn-dkps", "fld"};
const std::vector<std::string> kSources = {"singular", "gram"};

std::string one_line(std::string text) {
    std::replace(text.begin(), text.end(), '\n', ' ');
    while (!text.empty() && text.back() == ' ')
        text.pop_back();
    return text;
}

json tool_info() { return {{"name", "dkps"}, {"version", kVersion}}; }

SpectrumSource parse_source(const std::string& name) {
    return name == "gram" ? SpectrumSource::GramEigenvalues : SpectrumSource::DistanceSingularValues;
}

std::string source_name(SpectrumSource source) {
    return source == SpectrumSource::GramEigenvalues ? "gram_eigenvalues" : "distance_singular_values";
}

DimensionChoice parse_dimension(const std::string& dim, const std::string& source) {
    if (dim == "auto")
        return DimensionChoice::automatic(parse_source(source));
    return DimensionChoice::fixed(std::stoul(dim));
}

const CLI::Validator kDimension(
    [](std::string& value) -> std::string {
        if (value == "auto")
            return {};
        if (value.empty() || !std::all_of(value.begin(), value.end(), [](unsigned char c) { return std::isdigit(c); }) ||
            std::stoul(value) == 0)
            return "dimension must be 'auto' or a positive integer, got '" + value + "'";
        return {};
    },
    "auto|N");

struct PanelArgs {
    std::string embeddings;
    std::string format = "auto";
    std::string model_order;
    std::string query_order;
    bool drop_incomplete = false;
};

void add_panel_options(CLI::App* cmd, PanelArgs& args) {
    cmd->add_option("--embeddings", args.embeddings, "Embedded responses (JSONL or CSV)")->required();
    cmd->add_option("--format", args.format, "Embedding file format")
        ->check(CLI::IsMember({"auto", "jsonl", "csv"}))
        ->capture_default_str();
    cmd->add_option("--model-order", args.model_order, "File listing model ids in order, one per line");
    cmd->add_option("--query-order", args.query_order, "File listing query ids in order, one per line");
    cmd->add_flag("--drop-incomplete-queries", args.drop_incomplete,
                  "Drop queries some model never answered instead of failing");
}

io::EmbeddingFormat embedding_format(const std::string& path, const std::string& format) {
    if (format == "auto")
        return io::infer_format(path);
    return format == "csv" ? io::EmbeddingFormat::Csv : io::EmbeddingFormat::Jsonl;
}

EmbeddingPanel load_panel(const PanelArgs& args, io::Workspace* ws) {
    PanelOptions options;
    if (!args.model_order.empty()) {
        options.model_order = io::read_order(args.model_order);
        if (ws)
            ws->record_input("model_order", args.model_order);
    }
    if (!args.query_order.empty()) {
        options.query_order = io::read_order(args.query_order);
        if (ws)
            ws->record_input("query_order", args.query_order);
    }
    options.drop_incomplete_queries = args.drop_incomplete;
    auto records = io::read_embeddings(args.embeddings, embedding_format(args.embeddings, args.format));
    if (ws)
        ws->record_input("embeddings", args.embeddings);
    return validate_panel(std::move(records), options);
}

json panel_summary(const EmbeddingPanel& panel, const PanelArgs& args) {
    return {{"n", panel.n()},
            {"m", panel.m()},
            {"p", panel.p},
            {"min_replicates", panel.min_replicates},
            {"max_replicates", panel.max_replicates},
            {"format", args.format},
            {"drop_incomplete_queries", args.drop_incomplete},
            {"model_order", panel.model_order},
            {"query_order", panel.query_order}};
}

struct PredictorArgs {
    std::string method = "knn-dkps";
    std::size_t k = 1;
    std::optional<double> ridge;
};

void add_predictor_options(CLI::App* cmd, PredictorArgs& args) {
    cmd->add_option("--method", args.method, "Decision function")
        ->check(CLI::IsMember(kMethods))
        ->capture_default_str();
    cmd->add_option("--k", args.k, "Neighbors for knn-dkps")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--ridge", args.ridge, "FLD ridge (default 1e-6 tr(S_W)/d)")->check(CLI::NonNegativeNumber);
}

json predictor_summary(const PredictorArgs& args) {
    json j = {{"method", args.method}, {"k", args.k}};
    j["ridge"] = args.ridge ? json(*args.ridge) : json(nullptr);
    return j;
}

/// Workspace whose manifest must exist; artifacts are checked against their recorded digests.
struct OpenWorkspace {
    io::Workspace ws;

    explicit OpenWorkspace(const std::string& root) : ws(root) {
        if (!ws.manifest().contains("artifacts"))
            throw Error("MissingWorkspace", "'" + root + "' has no manifest; run build first");
    }

    fs::path artifact(const std::string& key) const {
        const auto& artifacts = ws.manifest()["artifacts"];
        if (!artifacts.contains(key))
            throw Error("MissingArtifact", "workspace has no '" + key + "' artifact");
        const fs::path path = ws.path(artifacts[key]["file"].get<std::string>());
        if (io::file_sha256(path) != artifacts[key]["sha256"].get<std::string>())
            throw Error("DigestMismatch", path.string() + " changed since it was written");
        return path;
    }

    Normalization normalization() const {
        return parse_normalization(ws.manifest().value("normalization", std::string("per_query")));
    }
};

PerspectiveSpace restrict_space(const PerspectiveSpace& space, const CovariateTable& table) {
    for (const auto& id : table.model_ids)
        if (std::find(space.labels.begin(), space.labels.end(), id) == space.labels.end())
            throw Error("UnknownModel", "covariate for model '" + id + "' which is not in the workspace");
    PerspectiveSpace out;
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < space.size(); ++i)
        if (table.find(space.labels[i])) {
            rows.push_back(static_cast<Eigen::Index>(i));
            out.labels.push_back(space.labels[i]);
        }
    out.coords.resize(static_cast<Eigen::Index>(rows.size()), space.coords.cols());
    for (std::size_t r = 0; r < rows.size(); ++r)
        out.coords.row(static_cast<Eigen::Index>(r)) = space.coords.row(rows[r]);
    out.selected_dim = space.selected_dim;
    return out;
}

std::string show(const Covariate& c) {
    return std::holds_alternative<double>(c) ? io::format_real(std::get<double>(c)) : std::get<std::string>(c);
}

template <typename F>
json optional_metric(F&& compute) {
    try {
        return compute();
    } catch (const Error&) {
        return nullptr; // undefined for this data (constant input, zero baseline)
    }
}

// ---------------------------------------------------------------- build

struct BuildArgs {
    PanelArgs panel;
    std::string out;
    std::string normalization = "per_query";
    std::string dim = "auto";
    std::string dim_source = "singular";
    std::uint64_t seed = 0;
};

void cmd_build(const BuildArgs& args, std::ostream& out) {
    io::Workspace ws(args.out);
    ws.manifest() = json::object();
    const EmbeddingPanel panel = load_panel(args.panel, &ws);
    const Normalization normalization = parse_normalization(args.normalization);
    const DimensionChoice choice = parse_dimension(args.dim, args.dim_source);

    const DistanceMatrix distances = pairwise_distances(aggregate_responses(panel), normalization);
    const PerspectiveSpace space = build_space(distances, choice);

    ws.write_artifact("distances", "distances.csv", io::distances_csv(distances));
    ws.write_artifact("spectrum", "spectrum.csv",
                      io::spectrum_csv(space.eigenvalues, distance_singular_values(distances)));
    ws.write_artifact("perspectives", "perspectives.csv", io::perspectives_csv(space));

    auto& manifest = ws.manifest();
    manifest["tool"] = tool_info();
    manifest["command"] = "build";
    manifest["seed"] = args.seed;
    manifest["normalization"] = std::string(to_string(normalization));
    manifest["dimension"] = {{"requested", args.dim},
                             {"source", source_name(choice.source)},
                             {"selected", space.selected_dim},
                             {"padded", space.padded_dims}};
    manifest["panel"] = panel_summary(panel, args.panel);
    ws.save_manifest();

    out << "built " << space.size() << " perspectives in " << space.dim() << " dimension"
        << (space.dim() == 1 ? "" : "s") << " -> " << ws.root().string() << "\n";
}

// ---------------------------------------------------------------- predict / evaluate

struct ModelArgs {
    std::string workspace;
    std::string covariates;
    std::string graph;
    PredictorArgs predictor;
    std::uint64_t seed = 0;
};

void add_model_options(CLI::App* cmd, ModelArgs& args) {
    cmd->add_option("--workspace", args.workspace, "Workspace written by build")->required();
    cmd->add_option("--covariates", args.covariates, "CSV model_id,y")->required();
    cmd->add_option("--graph", args.graph, "CSV src,dst (knn-graph)");
    cmd->add_option("--seed", args.seed, "Recorded in the manifest")->capture_default_str();
    add_predictor_options(cmd, args.predictor);
}

void cmd_predict(const ModelArgs& args, std::ostream& out) {
    OpenWorkspace open(args.workspace);
    const PerspectiveSpace space = io::read_perspectives(open.artifact("perspectives"));
    const CovariateTable table = io::read_covariates(args.covariates);
    std::optional<ModelGraph> graph;
    if (!args.graph.empty())
        graph = io::read_graph(args.graph);
    const PredictorSpec spec = parse_predictor(args.predictor.method, args.predictor.k, args.predictor.ridge);

    const PredictionResult result = predict_unlabeled(space, table, spec, graph ? &*graph : nullptr);
    std::string text = "model_id,prediction,used_fallback\n";
    for (std::size_t i = 0; i < result.model_ids.size(); ++i) {
        text += result.model_ids[i] + "," + show(result.predictions.at(i)) + "," +
                (result.used_fallback[i] ? "1" : "0") + "\n";
    }

    auto& ws = open.ws;
    ws.record_input("covariates", args.covariates);
    if (!args.graph.empty())
        ws.record_input("graph", args.graph);
    ws.write_artifact("predictions", "predictions.csv", text);
    ws.manifest()["predict"] = {{"seed", args.seed}, {"predictor", predictor_summary(args.predictor)}};
    ws.save_manifest();
    out << text;
}

void cmd_evaluate(const ModelArgs& args, std::ostream& out) {
    OpenWorkspace open(args.workspace);
    const PerspectiveSpace full = io::read_perspectives(open.artifact("perspectives"));
    const CovariateTable table = io::read_covariates(args.covariates);
    std::optional<ModelGraph> graph;
    if (!args.graph.empty())
        graph = io::read_graph(args.graph);
    const PredictorSpec spec = parse_predictor(args.predictor.method, args.predictor.k, args.predictor.ridge);

    const PerspectiveSpace space = restrict_space(full, table);
    const Covariates aligned = align_covariates(table, space.labels);
    const LooResult loo = leave_one_out_on_space(space, aligned, spec, graph ? &*graph : nullptr);
    PredictorSpec baseline_spec;
    baseline_spec.method = PredictorSpec::Method::GlobalMean;
    const LooResult baseline = leave_one_out_on_space(space, aligned, baseline_spec);

    json metrics;
    metrics["predictor"] = predictor_summary(args.predictor);
    metrics["n"] = space.size();
    metrics["mds_dim"] = loo.mds_dim;
    const bool regression = loo.truths.task == Task::Regression;
    metrics["task"] = regression ? "regression" : "classification";
    metrics["metric"] = regression ? "mse" : "misclassification";
    metrics["risk"] = loo.risk.value;
    metrics["std_error"] = loo.risk.std_error;
    metrics["global_mean_risk"] = baseline.risk.value;
    metrics["fallbacks"] = std::count(loo.used_fallback.begin(), loo.used_fallback.end(), true);
    if (regression) {
        const auto& truth = loo.truths.values;
        const auto& pred = loo.predictions.values;
        metrics["mae"] = expected_risk(loo.predictions, loo.truths, Loss::Absolute).value;
        metrics["kendall_tau"] = optional_metric([&] { return json(kendall_tau(pred, truth).tau); });
        metrics["kendall_p_value"] = optional_metric([&] { return json(kendall_tau(pred, truth).p_value); });
        metrics["r_squared"] = optional_metric([&] { return json(r_squared(pred, truth)); });
        metrics["rae_vs_global_mean"] =
            optional_metric([&] { return json(relative_absolute_error(loo.errors, baseline.errors)); });
    } else {
        metrics["rae_vs_global_mean"] =
            optional_metric([&] { return json(relative_absolute_error(loo.losses, baseline.losses)); });
    }

    std::string loo_text = "model_id,truth,prediction,loss\n";
    for (std::size_t i = 0; i < loo.model_ids.size(); ++i) {
        loo_text += loo.model_ids[i] + "," + show(loo.truths.at(i)) + "," + show(loo.predictions.at(i)) + "," +
                    io::format_real(loo.losses[i]) + "\n";
    }

    auto& ws = open.ws;
    ws.record_input("covariates", args.covariates);
    if (!args.graph.empty())
        ws.record_input("graph", args.graph);
    ws.write_artifact("metrics", "metrics.json", metrics.dump(2) + "\n");
    ws.write_artifact("loo", "loo.csv", loo_text);
    ws.manifest()["evaluate"] = {{"seed", args.seed}, {"predictor", predictor_summary(args.predictor)}};
    ws.save_manifest();
    out << metrics.dump(2) << "\n";
}

// ---------------------------------------------------------------- curve

struct CurveArgs {
    PanelArgs panel;
    std::string covariates;
    std::string out;
    std::vector<std::size_t> n_grid;
    std::vector<std::size_t> m_grid;
    std::size_t trials = 0;
    std::uint64_t seed = 0;
    PredictorArgs predictor;
    std::string normalization = "per_query";
    std::string dim = "auto";
    std::string dim_source = "singular";
    double test_fraction = 0.3;
};

void cmd_curve(const CurveArgs& args, std::ostream& out) {
    io::Workspace ws(args.out);
    ws.manifest() = json::object();
    const EmbeddingPanel panel = load_panel(args.panel, &ws);
    const CovariateTable table = io::read_covariates(args.covariates);
    ws.record_input("covariates", args.covariates);

    LearningCurveOptions options;
    options.n_grid = args.n_grid;
    options.m_grid = args.m_grid;
    options.trials = args.trials;
    options.seed = args.seed;
    options.predictor = parse_predictor(args.predictor.method, args.predictor.k, args.predictor.ridge);
    options.dimension = parse_dimension(args.dim, args.dim_source);
    options.normalization = parse_normalization(args.normalization);
    options.test_fraction = args.test_fraction;
    const LearningCurve curve = learning_curve(panel, table, options);

    const std::string metric(to_string(curve.cells.front().estimate.metric));
    std::string summary = "n,m,trials,metric,mean,std_error\n";
    for (const auto& cell : curve.cells)
        summary += std::to_string(cell.n) + "," + std::to_string(cell.m) + "," + std::to_string(cell.values.size()) +
                   "," + metric + "," + io::format_real(cell.estimate.value) + "," +
                   io::format_real(cell.estimate.std_error) + "\n";
    ws.write_artifact("curve", "curve.csv", io::curve_csv(curve, metric));
    ws.write_artifact("curve_summary", "curve_summary.csv", summary);

    auto& manifest = ws.manifest();
    manifest["tool"] = tool_info();
    manifest["command"] = "curve";
    manifest["seed"] = args.seed;
    manifest["normalization"] = args.normalization;
    manifest["dimension"] = {{"requested", args.dim}, {"source", source_name(options.dimension.source)}};
    manifest["panel"] = panel_summary(panel, args.panel);
    manifest["curve"] = {{"n_grid", args.n_grid},
                         {"m_grid", args.m_grid},
                         {"trials", args.trials},
                         {"test_fraction", args.test_fraction},
                         {"predictor", predictor_summary(args.predictor)}};
    ws.save_manifest();
    out << summary;
}

// ---------------------------------------------------------------- oos

struct OosArgs {
    std::string workspace;
    PanelArgs responses;
};

void cmd_oos(const OosArgs& args, std::ostream& out) {
    OpenWorkspace open(args.workspace);
    auto& manifest = open.ws.manifest();
    if (!manifest.contains("panel") || !manifest["inputs"].contains("embeddings"))
        throw Error("MissingWorkspace", "workspace was not written by build");
    const fs::path original = manifest["inputs"]["embeddings"]["path"].get<std::string>();
    if (io::file_sha256(original) != manifest["inputs"]["embeddings"]["sha256"].get<std::string>())
        throw Error("DigestMismatch", original.string() + " changed since the workspace was built");

    const Normalization normalization = open.normalization();
    const PerspectiveSpace space = io::read_perspectives(open.artifact("perspectives"));

    PanelOptions in_sample;
    in_sample.model_order = manifest["panel"]["model_order"].get<std::vector<std::string>>();
    in_sample.query_order = manifest["panel"]["query_order"].get<std::vector<std::string>>();
    const std::string format = manifest["panel"].value("format", std::string("auto"));
    const EmbeddingPanel panel = validate_panel(
        io::read_embeddings(original, embedding_format(original.string(), format)), in_sample);
    const std::vector<ModelMatrix> matrices = aggregate_responses(panel);

    PanelOptions fresh;
    fresh.query_order = panel.query_order;
    fresh.min_models = 1;
    const EmbeddingPanel incoming = validate_panel(
        io::read_embeddings(args.responses.embeddings,
                            embedding_format(args.responses.embeddings, args.responses.format)),
        fresh);
    if (incoming.p != panel.p)
        throw Error("DimensionMismatch", "new responses have p = " + std::to_string(incoming.p) + ", workspace has " +
                                             std::to_string(panel.p));

    PerspectiveSpace placed;
    placed.coords.resize(static_cast<Eigen::Index>(incoming.n()), space.coords.cols());
    std::vector<std::string> deficient;
    const std::vector<ModelMatrix> incoming_matrices = aggregate_responses(incoming);
    for (std::size_t i = 0; i < incoming_matrices.size(); ++i) {
        const auto deltas = distances_to(matrices, incoming_matrices[i], normalization);
        const OutOfSampleResult result = out_of_sample(space, deltas);
        placed.labels.push_back(incoming_matrices[i].model_id);
        placed.coords.row(static_cast<Eigen::Index>(i)) = result.coords.transpose();
        if (result.rank_deficient)
            deficient.push_back(incoming_matrices[i].model_id);
    }

    const std::string text = io::perspectives_csv(placed);
    open.ws.record_input("oos_embeddings", args.responses.embeddings);
    open.ws.write_artifact("oos", "oos.csv", text);
    manifest["oos"] = {{"models", placed.labels}, {"rank_deficient", deficient}};
    open.ws.save_manifest();
    out << text;
}

// ---------------------------------------------------------------- simulate

struct SimArgs {
    std::string experiment;
    std::string out;
    std::uint64_t seed = 0;
    std::optional<std::size_t> trials;
    std::optional<std::size_t> n;
    std::optional<std::size_t> m;
    std::optional<std::size_t> r;
    std::optional<std::size_t> p;
    std::optional<std::size_t> latent_dim;
    std::optional<double> sigma;
    std::optional<double> label_noise;
    std::optional<double> leakage;
    std::optional<std::size_t> test_models;
    std::optional<std::string> covariate;
    std::optional<std::string> normalization;
    std::vector<std::size_t> n_grid;
    std::vector<std::size_t> m_grid;
    std::vector<std::size_t> r_grid;
    double target = 0.2;
    double tolerance = 0.05;
};

void apply_overrides(const SimArgs& args, sim::SimulationConfig& config) {
    config.seed = args.seed;
    if (args.n)
        config.n = *args.n;
    if (args.m)
        config.m = *args.m;
    if (args.r)
        config.r = *args.r;
    if (args.p)
        config.p = *args.p;
    if (args.latent_dim)
        config.latent_dim = *args.latent_dim;
    if (args.sigma)
        config.noise_sigma = *args.sigma;
    if (args.label_noise)
        config.label_noise = *args.label_noise;
    if (args.leakage)
        config.leakage = *args.leakage;
    if (args.test_models)
        config.test_models = *args.test_models;
    if (args.covariate)
        config.covariate_kind = sim::parse_covariate_kind(*args.covariate);
    if (args.normalization)
        config.normalization = parse_normalization(*args.normalization);
}

json config_summary(const sim::SimulationConfig& c) {
    return {{"n", c.n},
            {"m", c.m},
            {"r", c.r},
            {"p", c.p},
            {"latent_dim", c.latent_dim},
            {"noise_sigma", c.noise_sigma},
            {"covariate", std::string(sim::to_string(c.covariate_kind))},
            {"label_noise", c.label_noise},
            {"query_kind", std::string(sim::to_string(c.query_kind))},
            {"leakage", c.leakage},
            {"test_models", c.test_models},
            {"normalization", std::string(to_string(c.normalization))}};
}

void print_report(const sim::ConvergenceReport& report, std::ostream& out) {
    out << report.experiment << " (" << report.tracked << ")\n";
    for (const auto& cell : report.cells) {
        for (const auto& [name, value] : cell.axes)
            out << "  " << name << "=" << value;
        out << "  median=" << cell.median << "  iqr=[" << cell.q25 << ", " << cell.q75 << "]\n";
    }
}

void print_verdicts(const std::vector<sim::Verdict>& verdicts, std::ostream& out) {
    for (const auto& v : verdicts)
        out << (v.passed ? "PASS " : "FAIL ") << v.name << ": " << v.detail << "\n";
}

void cmd_simulate(const SimArgs& args, std::ostream& out) {
    io::Workspace ws(args.out);
    ws.manifest() = json::object();
    auto& manifest = ws.manifest();
    manifest["tool"] = tool_info();
    manifest["command"] = "simulate";
    manifest["experiment"] = args.experiment;
    manifest["seed"] = args.seed;

    sim::SimulationConfig config;
    if (args.experiment == "theorem1") {
        config.test_models = 200;
        apply_overrides(args, config);
        const std::vector<std::size_t> m_grid = args.m_grid.empty() ? std::vector<std::size_t>{16, 64, 256} : args.m_grid;
        const std::vector<std::size_t> r_grid = args.r_grid.empty() ? std::vector<std::size_t>{1, 4, 16} : args.r_grid;
        const std::size_t trials = args.trials.value_or(20);
        const auto report = sim::theorem1_gap(config, m_grid, r_grid, trials);
        ws.write_artifact("report", "report.csv", io::report_csv(report));
        ws.write_artifact("summary", "summary.json", io::report_summary(report).dump(2) + "\n");
        manifest["config"] = config_summary(config);
        manifest["grids"] = {{"m", m_grid}, {"r", r_grid}, {"trials", trials}};
        print_report(report, out);
        print_verdicts(report.verdicts, out);
    } else if (args.experiment == "theorem2") {
        config.covariate_kind = sim::CovariateKind::HalfspaceLabel;
        config.m = 256;
        config.r = 4;
        config.test_models = 1000;
        apply_overrides(args, config);
        const std::vector<std::size_t> n_grid =
            args.n_grid.empty() ? std::vector<std::size_t>{16, 64, 256, 512} : args.n_grid;
        const std::vector<std::size_t> m_sched = args.m_grid.empty() ? std::vector<std::size_t>(n_grid.size(), config.m)
                                                                     : args.m_grid;
        const std::vector<std::size_t> r_sched = args.r_grid.empty() ? std::vector<std::size_t>(n_grid.size(), config.r)
                                                                     : args.r_grid;
        const std::size_t trials = args.trials.value_or(20);
        const auto report = sim::theorem2_curve(config, n_grid, m_sched, r_sched, trials, {args.tolerance});
        ws.write_artifact("report", "report.csv", io::report_csv(report));
        ws.write_artifact("summary", "summary.json", io::report_summary(report).dump(2) + "\n");
        manifest["config"] = config_summary(config);
        manifest["grids"] = {{"n", n_grid}, {"m", m_sched}, {"r", r_sched}, {"trials", trials}};
        print_report(report, out);
        print_verdicts(report.verdicts, out);
    } else {
        config.covariate_kind = sim::CovariateKind::HalfspaceLabel;
        config.n = 100;
        config.test_models = 400;
        config.leakage = 0.2;
        apply_overrides(args, config);
        sim::SimulationConfig relevant = config;
        relevant.query_kind = sim::QueryKind::Relevant;
        relevant.leakage = 0.0;
        sim::SimulationConfig orthogonal = config;
        orthogonal.query_kind = sim::QueryKind::Orthogonal;
        const std::vector<std::size_t> m_grid =
            args.m_grid.empty() ? std::vector<std::size_t>{1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024} : args.m_grid;
        const std::size_t trials = args.trials.value_or(20);
        const auto report = sim::query_distribution_experiment(relevant, orthogonal, m_grid, trials, args.target);

        json summary = {{"relevant", io::report_summary(report.relevant)},
                        {"orthogonal", io::report_summary(report.orthogonal)},
                        {"target_risk", report.target_risk}};
        summary["relevant_m_to_target"] =
            report.relevant_m_to_target ? json(*report.relevant_m_to_target) : json(nullptr);
        summary["orthogonal_m_to_target"] =
            report.orthogonal_m_to_target ? json(*report.orthogonal_m_to_target) : json(nullptr);
        summary["verdicts"] = json::array();
        for (const auto& v : report.verdicts)
            summary["verdicts"].push_back({{"name", v.name}, {"passed", v.passed}, {"detail", v.detail}});
        ws.write_artifact("relevant", "relevant.csv", io::report_csv(report.relevant));
        ws.write_artifact("orthogonal", "orthogonal.csv", io::report_csv(report.orthogonal));
        ws.write_artifact("summary", "summary.json", summary.dump(2) + "\n");
        manifest["config"] = config_summary(config);
        manifest["grids"] = {{"m", m_grid}, {"trials", trials}, {"target_risk", args.target}};
        print_report(report.relevant, out);
        print_report(report.orthogonal, out);
        print_verdicts(report.verdicts, out);
    }
    ws.save_manifest();
}

// ---------------------------------------------------------------- dim

struct DimArgs {
    std::string values;
    std::string distances;
    std::string dim_source = "singular";
    std::string out;
};

void cmd_dim(const DimArgs& args, std::ostream& out) {
    std::vector<double> values;
    if (!args.values.empty())
        values = io::read_values(args.values);
    else
        values = dimension_spectrum(io::read_distances(args.distances), parse_source(args.dim_source));
    const SpectrumReport report = select_dimension(values);
    if (!args.out.empty()) {
        io::Workspace ws(args.out);
        ws.manifest() = json::object();
        ws.manifest()["tool"] = tool_info();
        ws.manifest()["command"] = "dim";
        ws.manifest()["seed"] = nullptr;
        ws.record_input(args.values.empty() ? "distances" : "values", args.values.empty() ? args.distances : args.values);
        std::string profile = "q,profile_loglik\n";
        for (std::size_t q = 0; q < report.profile_loglik.size(); ++q)
            profile += std::to_string(q + 1) + "," + io::format_real(report.profile_loglik[q]) + "\n";
        ws.write_artifact("profile", "profile.csv", profile);
        ws.manifest()["chosen_elbow"] = report.chosen_elbow;
        ws.save_manifest();
    }
    out << report.chosen_elbow << "\n";
}

// ---------------------------------------------------------------- embed

struct EmbedArgs {
    std::string texts;
    std::string out;
    io::EmbeddingServiceConfig service;
    long timeout_ms = 30000;
};

std::vector<io::TextItem> read_texts(const std::string& path) {
    std::vector<io::TextItem> items;
    std::istringstream lines(io::read_text(path));
    std::string line;
    for (std::size_t number = 1; std::getline(lines, line); ++number) {
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        try {
            const json doc = json::parse(line);
            items.push_back({doc.at("model_id").get<std::string>(), doc.at("query_id").get<std::string>(),
                             doc.value("replicate", std::size_t{0}), doc.at("text").get<std::string>()});
        } catch (const json::exception& e) {
            throw Error("ParseError", "line " + std::to_string(number) + ": " + e.what());
        }
    }
    return items;
}

void cmd_embed(EmbedArgs args, std::ostream& out) {
    args.service.timeout = std::chrono::milliseconds(args.timeout_ms);
    const auto items = read_texts(args.texts);
    const auto records = io::embed_via_service(items, args.service);
    io::write_embeddings(args.out, records, io::infer_format(args.out));
    out << "embedded " << records.size() << " responses -> " << args.out << "\n";
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Data kernel perspective space: represent generative models by their embedded responses", "dkps"};
    app.set_version_flag("--version", kVersion);
    app.set_config("--config", "", "Key-value file of option defaults (flags take precedence)");
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "Cap on worker threads (0 = OpenMP default)")->check(CLI::NonNegativeNumber);

    BuildArgs build;
    auto* build_cmd = app.add_subcommand("build", "Panel -> distances, spectrum and perspectives in a workspace");
    add_panel_options(build_cmd, build.panel);
    build_cmd->add_option("--out", build.out, "Workspace directory")->required();
    build_cmd->add_option("--normalization", build.normalization)->check(CLI::IsMember(kNormalizations))->capture_default_str();
    build_cmd->add_option("--dim", build.dim, "Perspective dimension")->check(kDimension)->capture_default_str();
    build_cmd->add_option("--dim-source", build.dim_source, "Spectrum for --dim auto")
        ->check(CLI::IsMember(kSources))
        ->capture_default_str();
    build_cmd->add_option("--seed", build.seed, "Recorded in the manifest")->capture_default_str();

    ModelArgs predict;
    auto* predict_cmd = app.add_subcommand("predict", "Predict covariates of unlabeled models in a workspace");
    add_model_options(predict_cmd, predict);

    ModelArgs evaluate;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Leave-one-out metrics against the global mean");
    add_model_options(evaluate_cmd, evaluate);

    CurveArgs curve;
    auto* curve_cmd = app.add_subcommand("curve", "Learning curves over (n', m') subsamples");
    add_panel_options(curve_cmd, curve.panel);
    curve_cmd->add_option("--covariates", curve.covariates, "CSV model_id,y")->required();
    curve_cmd->add_option("--out", curve.out, "Output directory")->required();
    curve_cmd->add_option("--n-grid", curve.n_grid, "Model counts, comma separated")->delimiter(',')->required();
    curve_cmd->add_option("--m-grid", curve.m_grid, "Query counts, comma separated")->delimiter(',')->required();
    curve_cmd->add_option("--trials", curve.trials, "Trials per cell (0 = min(200, ceil(2000/m')))")->capture_default_str();
    curve_cmd->add_option("--seed", curve.seed)->capture_default_str();
    curve_cmd->add_option("--normalization", curve.normalization)->check(CLI::IsMember(kNormalizations))->capture_default_str();
    curve_cmd->add_option("--dim", curve.dim)->check(kDimension)->capture_default_str();
    curve_cmd->add_option("--dim-source", curve.dim_source)->check(CLI::IsMember(kSources))->capture_default_str();
    curve_cmd->add_option("--test-fraction", curve.test_fraction, "Held-out share for classification")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    add_predictor_options(curve_cmd, curve.predictor);

    OosArgs oos;
    auto* oos_cmd = app.add_subcommand("oos", "Place new models into an existing workspace");
    oos_cmd->add_option("--workspace", oos.workspace)->required();
    oos_cmd->add_option("--embeddings", oos.responses.embeddings, "Responses of the new models")->required();
    oos_cmd->add_option("--format", oos.responses.format)->check(CLI::IsMember({"auto", "jsonl", "csv"}))->capture_default_str();

    SimArgs simulate;
    auto* sim_cmd = app.add_subcommand("simulate", "Planted-population convergence experiments");
    sim_cmd->add_option("experiment", simulate.experiment)
        ->check(CLI::IsMember({"theorem1", "theorem2", "querydist"}))
        ->required();
    sim_cmd->add_option("--out", simulate.out, "Output directory")->required();
    sim_cmd->add_option("--seed", simulate.seed)->capture_default_str();
    sim_cmd->add_option("--trials", simulate.trials);
    sim_cmd->add_option("--n", simulate.n)->check(CLI::PositiveNumber);
    sim_cmd->add_option("--m", simulate.m)->check(CLI::PositiveNumber);
    sim_cmd->add_option("--r", simulate.r)->check(CLI::PositiveNumber);
    sim_cmd->add_option("--p", simulate.p)->check(CLI::PositiveNumber);
    sim_cmd->add_option("--latent-dim", simulate.latent_dim)->check(CLI::PositiveNumber);
    sim_cmd->add_option("--sigma", simulate.sigma)->check(CLI::NonNegativeNumber);
    sim_cmd->add_option("--label-noise", simulate.label_noise)->check(CLI::Range(0.0, 0.5));
    sim_cmd->add_option("--leakage", simulate.leakage)->check(CLI::NonNegativeNumber);
    sim_cmd->add_option("--test-models", simulate.test_models)->check(CLI::PositiveNumber);
    sim_cmd->add_option("--covariate", simulate.covariate)->check(CLI::IsMember({"linear_regression", "halfspace_label"}));
    sim_cmd->add_option("--normalization", simulate.normalization)->check(CLI::IsMember(kNormalizations));
    sim_cmd->add_option("--n-grid", simulate.n_grid)->delimiter(',');
    sim_cmd->add_option("--m-grid", simulate.m_grid, "m grid, or the m(n) schedule for theorem2")->delimiter(',');
    sim_cmd->add_option("--r-grid", simulate.r_grid, "r grid, or the r(n) schedule for theorem2")->delimiter(',');
    sim_cmd->add_option("--target", simulate.target, "querydist target risk")->capture_default_str();
    sim_cmd->add_option("--tolerance", simulate.tolerance, "theorem2 slack over the reference risk")->capture_default_str();

    DimArgs dim;
    auto* dim_cmd = app.add_subcommand("dim", "Profile-likelihood elbow of a spectrum");
    auto* values_opt = dim_cmd->add_option("--values", dim.values, "Nonincreasing values, one per line or a CSV column");
    auto* distances_opt = dim_cmd->add_option("--distances", dim.distances, "distances.csv from a workspace");
    values_opt->excludes(distances_opt);
    dim_cmd->add_option("--dim-source", dim.dim_source)->check(CLI::IsMember(kSources))->capture_default_str();
    dim_cmd->add_option("--out", dim.out, "Optional directory for the profile and a manifest");

    EmbedArgs embed;
    auto* embed_cmd = app.add_subcommand("embed", "Embed response texts through a remote service");
    embed_cmd->add_option("--texts", embed.texts, "JSONL of {model_id, query_id, replicate, text}")->required();
    embed_cmd->add_option("--out", embed.out, "Embeddings file (.jsonl or .csv)")->required();
    embed_cmd->add_option("--endpoint", embed.service.endpoint)->required();
    embed_cmd->add_option("--model", embed.service.model)->required();
    embed_cmd->add_option("--batch-size", embed.service.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
    embed_cmd->add_option("--timeout-ms", embed.timeout_ms)->check(CLI::PositiveNumber)->capture_default_str();
    embed_cmd->add_option("--token-env", embed.service.token_env, "Environment variable holding the bearer token");
    embed_cmd->add_option("--concurrency", embed.service.max_concurrency)->check(CLI::PositiveNumber)->capture_default_str();
    embed_cmd->add_option("--attempts", embed.service.max_attempts)->check(CLI::PositiveNumber)->capture_default_str();

    std::vector<const char*> argv;
    for (const auto& a : args)
        argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::Success& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "error: UsageError: " << one_line(e.what()) << "\n";
        const CLI::App* failing = &app;
        for (const auto* sub : app.get_subcommands())
            failing = sub;
        err << failing->help();
        return kUsage;
    }

    if (dim_cmd->parsed() && dim.values.empty() && dim.distances.empty()) {
        err << "error: UsageError: dim needs --values or --distances\n" << dim_cmd->help();
        return kUsage;
    }

    try {
        if (threads > 0)
            omp_set_num_threads(threads);
        if (build_cmd->parsed())
            cmd_build(build, out);
        else if (predict_cmd->parsed())
            cmd_predict(predict, out);
        else if (evaluate_cmd->parsed())
            cmd_evaluate(evaluate, out);
        else if (curve_cmd->parsed())
            cmd_curve(curve, out);
        else if (oos_cmd->parsed())
            cmd_oos(oos, out);
        else if (sim_cmd->parsed())
            cmd_simulate(simulate, out);
        else if (dim_cmd->parsed())
            cmd_dim(dim, out);
        else if (embed_cmd->parsed())
            cmd_embed(embed, out);
    } catch (const UsageError& e) {
        err << "error: UsageError: " << one_line(e.what()) << "\n";
        return kUsage;
    } catch (const Error& e) {
        err << "error: " << e.code() << ": " << one_line(e.what()) << "\n";
        return kDataError;
    } catch (const fs::filesystem_error& e) {
        err << "error: IoError: " << one_line(e.what()) << "\n";
        return kDataError;
    } catch (const std::exception& e) {
        err << "error: InternalError: " << one_line(e.what()) << "\n";
        return kDataError;
    }
    return kOk;
}

int run(int argc, const char* const* argv) {
    return run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

} // namespace dkps::cli
