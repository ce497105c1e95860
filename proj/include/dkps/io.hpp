#ifndef DKPS_IO_HPP
#define DKPS_IO_HPP

// File formats and workspace persistence.
//
//   embeddings (JSONL)  {"model_id": s, "query_id": s, "replicate": int, "embedding": [reals]}
//   embeddings (CSV)    model_id,query_id,replicate,e0,...,e{p-1}
//   covariates (CSV)    model_id,y        numeric y -> regression, otherwise labels
//   graph (CSV)         src,dst           undirected, duplicates collapse
//   distances / perspectives  labeled CSV, first column model_id, reals as %.17g
//   curves / reports    long-form CSV
//   metrics / manifest  JSON

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dkps/eval.hpp"
#include "dkps/geometry.hpp"
#include "dkps/inference.hpp"
#include "dkps/panel.hpp"
#include "dkps/simulate.hpp"

namespace dkps::io {

namespace fs = std::filesystem;

enum class EmbeddingFormat { Jsonl, Csv };

/// Picks the format from the extension (.csv -> CSV, anything else JSONL).
EmbeddingFormat infer_format(const fs::path& path);

/// Shortest decimal that is never lossy for doubles: 17 significant digits.
std::string format_real(double value);

/// Strict decimal parse of a whole token; throws ParseError / NonFiniteValue naming `where`.
double parse_real(std::string_view token, const std::string& where);

std::vector<std::string> split_csv_line(std::string_view line);

std::vector<ResponseRecord> parse_embeddings(std::string_view text, EmbeddingFormat format);
std::vector<ResponseRecord> read_embeddings(const fs::path& path, EmbeddingFormat format);
std::vector<ResponseRecord> read_embeddings(const fs::path& path);
std::string format_embeddings(std::span<const ResponseRecord> records, EmbeddingFormat format);
void write_embeddings(const fs::path& path, std::span<const ResponseRecord> records, EmbeddingFormat format);

CovariateTable read_covariates(const fs::path& path);
ModelGraph read_graph(const fs::path& path);
/// One id per line; blank lines ignored.
std::vector<std::string> read_order(const fs::path& path);
/// A column of reals: one per line, or the `value` column (else the last column) of a CSV with a header.
std::vector<double> read_values(const fs::path& path);

std::string read_text(const fs::path& path);
/// Writes through a temporary file and renames it into place.
void write_text(const fs::path& path, std::string_view content);

std::string distances_csv(const DistanceMatrix& distances);
DistanceMatrix read_distances(const fs::path& path, Normalization normalization = Normalization::PerQuery);

std::string perspectives_csv(const PerspectiveSpace& space);
/// Labels and coordinates only; spectrum metadata lives in spectrum.csv and the manifest.
PerspectiveSpace read_perspectives(const fs::path& path);

std::string spectrum_csv(const Eigen::VectorXd& gram_eigenvalues, std::span<const double> distance_singular_values);

std::string curve_csv(const LearningCurve& curve, std::string_view metric);
std::string report_csv(const sim::ConvergenceReport& report);
nlohmann::json report_summary(const sim::ConvergenceReport& report);

std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const fs::path& path);

/// A directory of artifacts plus manifest.json describing how they were made.
class Workspace {
public:
    explicit Workspace(fs::path root);

    const fs::path& root() const { return root_; }
    fs::path path(std::string_view name) const { return root_ / name; }

    /// Writes an artifact and registers it in the manifest under `key`.
    fs::path write_artifact(const std::string& key, std::string_view file_name, std::string_view content);
    void record_input(const std::string& key, const fs::path& input);
    nlohmann::json& manifest() { return manifest_; }
    const nlohmann::json& manifest() const { return manifest_; }
    /// Persists manifest.json (sorted keys, stable bytes).
    void save_manifest() const;

private:
    fs::path root_;
    nlohmann::json manifest_;
};

} // namespace dkps::io

#endif
