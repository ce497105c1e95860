#include "dkps/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "dkps/error.hpp"

namespace dkps::io {

namespace {

using nlohmann::json;

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> lines_of(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto end = text.find('\n', start);
        if (end == std::string_view::npos) {
            if (start < text.size())
                lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, end - start));
        start = end + 1;
    }
    return lines;
}

std::string at_line(std::size_t line) { return "line " + std::to_string(line); }

[[noreturn]] void parse_error(std::size_t line, const std::string& what) {
    throw Error("ParseError", at_line(line) + ": " + what);
}

std::size_t parse_replicate(std::string_view token, std::size_t line) {
    token = trim(token);
    std::size_t value = 0;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (token.empty() || ec != std::errc() || ptr != token.data() + token.size())
        parse_error(line, "replicate '" + std::string(token) + "' is not a nonnegative integer");
    return value;
}

bool try_parse_finite(std::string_view token, double& out) {
    token = trim(token);
    if (token.empty())
        return false;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), out);
    return ec == std::errc() && ptr == token.data() + token.size() && std::isfinite(out);
}

std::string csv_field(std::string_view field) {
    if (field.find_first_of(",\"\n") == std::string_view::npos)
        return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"')
            out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<ResponseRecord> parse_jsonl(std::string_view text) {
    static const std::set<std::string> allowed = {"model_id", "query_id", "replicate", "embedding"};
    std::vector<ResponseRecord> records;
    const auto lines = lines_of(text);
    for (std::size_t index = 0; index < lines.size(); ++index) {
        const std::size_t line = index + 1;
        const std::string_view raw = trim(lines[index]);
        if (raw.empty())
            continue;

        json doc;
        try {
            doc = json::parse(raw);
        } catch (const json::parse_error& e) {
            parse_error(line, std::string("invalid JSON (") + e.what() + ")");
        }
        if (!doc.is_object())
            parse_error(line, "expected a JSON object");
        for (const auto& [key, value] : doc.items())
            if (!allowed.contains(key))
                parse_error(line, "unexpected key '" + key + "'");

        ResponseRecord record;
        const auto model = doc.find("model_id");
        const auto query = doc.find("query_id");
        const auto replicate = doc.find("replicate");
        const auto embedding = doc.find("embedding");
        if (model == doc.end() || !model->is_string())
            parse_error(line, "missing string field 'model_id'");
        if (query == doc.end() || !query->is_string())
            parse_error(line, "missing string field 'query_id'");
        if (replicate == doc.end() || !replicate->is_number_integer() ||
            (replicate->is_number_integer() && !replicate->is_number_unsigned() && replicate->get<std::int64_t>() < 0))
            parse_error(line, "'replicate' must be a nonnegative integer");
        if (embedding == doc.end() || !embedding->is_array() || embedding->empty())
            parse_error(line, "'embedding' must be a nonempty array of numbers");

        record.model_id = model->get<std::string>();
        record.query_id = query->get<std::string>();
        record.replicate = replicate->get<std::size_t>();
        record.embedding.reserve(embedding->size());
        for (const auto& value : *embedding) {
            if (!value.is_number())
                parse_error(line, "embedding entry '" + value.dump() + "' is not a number");
            const double v = value.get<double>();
            if (!std::isfinite(v))
                throw Error("NonFiniteValue", at_line(line) + ": embedding entry is not finite");
            record.embedding.push_back(v);
        }
        if (!records.empty() && record.embedding.size() != records.front().embedding.size())
            parse_error(line, "embedding has " + std::to_string(record.embedding.size()) + " entries, earlier lines have " +
                                  std::to_string(records.front().embedding.size()));
        records.push_back(std::move(record));
    }
    return records;
}

std::vector<ResponseRecord> parse_csv_embeddings(std::string_view text) {
    std::vector<ResponseRecord> records;
    const auto lines = lines_of(text);
    std::size_t width = 0;
    for (std::size_t index = 0; index < lines.size(); ++index) {
        const std::size_t line = index + 1;
        if (trim(lines[index]).empty())
            continue;
        const auto fields = split_csv_line(lines[index]);

        if (width == 0) {
            if (fields.size() < 4 || trim(fields[0]) != "model_id" || trim(fields[1]) != "query_id" ||
                trim(fields[2]) != "replicate")
                parse_error(line, "header must be model_id,query_id,replicate,e0,...");
            for (std::size_t c = 3; c < fields.size(); ++c)
                if (trim(fields[c]) != "e" + std::to_string(c - 3))
                    parse_error(line, "header column " + std::to_string(c + 1) + " must be e" + std::to_string(c - 3));
            width = fields.size();
            continue;
        }
        if (fields.size() != width)
            parse_error(line, "expected " + std::to_string(width) + " fields, got " + std::to_string(fields.size()));

        ResponseRecord record;
        record.model_id = std::string(trim(fields[0]));
        record.query_id = std::string(trim(fields[1]));
        if (record.model_id.empty() || record.query_id.empty())
            parse_error(line, "empty model_id or query_id");
        record.replicate = parse_replicate(fields[2], line);
        for (std::size_t c = 3; c < width; ++c)
            record.embedding.push_back(parse_real(fields[c], at_line(line)));
        records.push_back(std::move(record));
    }
    if (width == 0)
        throw Error("ParseError", "line 1: missing header");
    return records;
}

/// Rows of a CSV with a required header; returns (line number, fields).
std::vector<std::pair<std::size_t, std::vector<std::string>>> csv_rows(std::string_view text,
                                                                        std::span<const std::string_view> header) {
    std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
    const auto lines = lines_of(text);
    bool seen_header = false;
    for (std::size_t index = 0; index < lines.size(); ++index) {
        const std::size_t line = index + 1;
        if (trim(lines[index]).empty())
            continue;
        auto fields = split_csv_line(lines[index]);
        for (auto& f : fields)
            f = std::string(trim(f));
        if (!seen_header) {
            if (fields.size() != header.size() || fields[0] != header[0])
                parse_error(line, "unexpected header");
            seen_header = true;
            continue;
        }
        if (fields.size() != header.size())
            parse_error(line, "expected " + std::to_string(header.size()) + " fields, got " +
                                  std::to_string(fields.size()));
        rows.emplace_back(line, std::move(fields));
    }
    if (!seen_header)
        throw Error("ParseError", "line 1: missing header");
    return rows;
}

/// Square or rectangular table with a model_id first column and a header row.
std::pair<std::vector<std::string>, std::vector<std::pair<std::string, std::vector<double>>>>
labeled_table(const fs::path& path) {
    const std::string text = read_text(path);
    const auto lines = lines_of(text);
    std::vector<std::string> header;
    std::vector<std::pair<std::string, std::vector<double>>> rows;
    for (std::size_t index = 0; index < lines.size(); ++index) {
        const std::size_t line = index + 1;
        if (trim(lines[index]).empty())
            continue;
        const auto fields = split_csv_line(lines[index]);
        if (header.empty()) {
            if (fields.empty() || trim(fields[0]) != "model_id")
                parse_error(line, "first header column must be model_id");
            for (std::size_t c = 1; c < fields.size(); ++c)
                header.emplace_back(trim(fields[c]));
            continue;
        }
        if (fields.size() != header.size() + 1)
            parse_error(line, "row width does not match header");
        std::vector<double> values;
        for (std::size_t c = 1; c < fields.size(); ++c)
            values.push_back(parse_real(fields[c], path.string() + " " + at_line(line)));
        rows.emplace_back(std::string(trim(fields[0])), std::move(values));
    }
    return {header, rows};
}

} // namespace

EmbeddingFormat infer_format(const fs::path& path) {
    return path.extension() == ".csv" ? EmbeddingFormat::Csv : EmbeddingFormat::Jsonl;
}

std::string format_real(double value) {
    char buffer[40];
    std::snprintf(buffer, sizeof buffer, "%.17g", value);
    return buffer;
}

double parse_real(std::string_view token, const std::string& where) {
    token = trim(token);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (token.empty() || ec != std::errc() || ptr != token.data() + token.size())
        throw Error("ParseError", where + ": '" + std::string(token) + "' is not a number");
    if (!std::isfinite(value))
        throw Error("NonFiniteValue", where + ": '" + std::string(token) + "' is not finite");
    return value;
}

std::vector<std::string> split_csv_line(std::string_view line) {
    if (!line.empty() && line.back() == '\r')
        line.remove_suffix(1);
    std::vector<std::string> fields;
    std::string current;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                current += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                current += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(current));
            current.clear();
        } else {
            current += c;
        }
    }
    fields.push_back(std::move(current));
    return fields;
}

std::vector<ResponseRecord> parse_embeddings(std::string_view text, EmbeddingFormat format) {
    return format == EmbeddingFormat::Jsonl ? parse_jsonl(text) : parse_csv_embeddings(text);
}

std::vector<ResponseRecord> read_embeddings(const fs::path& path, EmbeddingFormat format) {
    return parse_embeddings(read_text(path), format);
}

std::vector<ResponseRecord> read_embeddings(const fs::path& path) {
    return read_embeddings(path, infer_format(path));
}

std::string format_embeddings(std::span<const ResponseRecord> records, EmbeddingFormat format) {
    std::string out;
    if (format == EmbeddingFormat::Jsonl) {
        for (const auto& record : records) {
            out += "{\"model_id\":" + json(record.model_id).dump() + ",\"query_id\":" + json(record.query_id).dump() +
                   ",\"replicate\":" + std::to_string(record.replicate) + ",\"embedding\":[";
            for (std::size_t t = 0; t < record.embedding.size(); ++t)
                out += (t ? "," : "") + format_real(record.embedding[t]);
            out += "]}\n";
        }
        return out;
    }
    const std::size_t p = records.empty() ? 0 : records.front().embedding.size();
    out = "model_id,query_id,replicate";
    for (std::size_t t = 0; t < p; ++t)
        out += ",e" + std::to_string(t);
    out += "\n";
    for (const auto& record : records) {
        out += csv_field(record.model_id) + "," + csv_field(record.query_id) + "," + std::to_string(record.replicate);
        for (double v : record.embedding)
            out += "," + format_real(v);
        out += "\n";
    }
    return out;
}

void write_embeddings(const fs::path& path, std::span<const ResponseRecord> records, EmbeddingFormat format) {
    write_text(path, format_embeddings(records, format));
}

CovariateTable read_covariates(const fs::path& path) {
    static constexpr std::string_view header[] = {"model_id", "y"};
    const auto rows = csv_rows(read_text(path), header);
    if (rows.empty())
        throw Error("Empty", path.string() + ": no covariate rows");

    CovariateTable table;
    std::set<std::string> seen;
    bool numeric = true;
    std::vector<double> values;
    std::vector<std::string> labels;
    for (const auto& [line, fields] : rows) {
        if (fields[0].empty())
            parse_error(line, "empty model_id");
        if (!seen.insert(fields[0]).second)
            throw Error("DuplicateRecord", at_line(line) + ": model '" + fields[0] + "' listed twice");
        table.model_ids.push_back(fields[0]);
        double v = 0.0;
        numeric = numeric && try_parse_finite(fields[1], v);
        values.push_back(v);
        labels.push_back(fields[1]);
    }
    table.covariates = numeric ? Covariates::regression(std::move(values)) : Covariates::classification(std::move(labels));
    return table;
}

ModelGraph read_graph(const fs::path& path) {
    static constexpr std::string_view header[] = {"src", "dst"};
    ModelGraph graph;
    for (const auto& [line, fields] : csv_rows(read_text(path), header)) {
        if (fields[0].empty() || fields[1].empty())
            parse_error(line, "empty node id");
        if (fields[0] == fields[1])
            throw Error("SelfLoop", at_line(line) + ": self-loop on '" + fields[0] + "'");
        graph.add_edge(fields[0], fields[1]);
    }
    return graph;
}

std::vector<std::string> read_order(const fs::path& path) {
    std::vector<std::string> order;
    for (auto line : lines_of(read_text(path))) {
        line = trim(line);
        if (!line.empty())
            order.emplace_back(line);
    }
    return order;
}

std::vector<double> read_values(const fs::path& path) {
    const std::string text = read_text(path);
    const auto lines = lines_of(text);
    std::vector<double> values;
    std::optional<std::size_t> column;
    for (std::size_t index = 0; index < lines.size(); ++index) {
        const std::size_t line = index + 1;
        if (trim(lines[index]).empty())
            continue;
        const auto fields = split_csv_line(lines[index]);
        if (!column) {
            double probe = 0.0;
            if (fields.size() == 1 && try_parse_finite(fields[0], probe)) {
                column = 0;
            } else {
                // Header row: prefer a column named "value", else the last one.
                column = fields.size() - 1;
                for (std::size_t c = 0; c < fields.size(); ++c)
                    if (trim(fields[c]) == "value")
                        column = c;
                continue;
            }
        }
        if (*column >= fields.size())
            parse_error(line, "missing value column");
        values.push_back(parse_real(fields[*column], at_line(line)));
    }
    return values;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("IoError", "cannot open '" + path.string() + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_text(const fs::path& path, std::string_view content) {
    std::error_code ec;
    if (path.has_parent_path())
        fs::create_directories(path.parent_path(), ec);
    const fs::path temp = path.string() + ".tmp";
    {
        std::ofstream out(temp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw Error("IoError", "cannot write '" + path.string() + "'");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out)
            throw Error("IoError", "short write to '" + path.string() + "'");
    }
    fs::rename(temp, path, ec);
    if (ec)
        throw Error("IoError", "cannot move '" + temp.string() + "' into place: " + ec.message());
}

std::string distances_csv(const DistanceMatrix& distances) {
    std::string out = "model_id";
    for (const auto& label : distances.labels)
        out += "," + csv_field(label);
    out += "\n";
    for (Eigen::Index i = 0; i < distances.values.rows(); ++i) {
        out += csv_field(distances.labels[static_cast<std::size_t>(i)]);
        for (Eigen::Index j = 0; j < distances.values.cols(); ++j)
            out += "," + format_real(distances.values(i, j));
        out += "\n";
    }
    return out;
}

DistanceMatrix read_distances(const fs::path& path, Normalization normalization) {
    const auto [header, rows] = labeled_table(path);
    if (rows.size() != header.size())
        throw Error("ParseError", path.string() + ": distance table is not square");
    DistanceMatrix distances;
    distances.normalization = normalization;
    distances.labels = header;
    const auto n = static_cast<Eigen::Index>(header.size());
    distances.values.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (rows[static_cast<std::size_t>(i)].first != header[static_cast<std::size_t>(i)])
            throw Error("ParseError", path.string() + ": row labels do not match column labels");
        for (Eigen::Index j = 0; j < n; ++j)
            distances.values(i, j) = rows[static_cast<std::size_t>(i)].second[static_cast<std::size_t>(j)];
    }
    return distances;
}

std::string perspectives_csv(const PerspectiveSpace& space) {
    std::string out = "model_id";
    for (Eigen::Index k = 0; k < space.coords.cols(); ++k)
        out += ",dim" + std::to_string(k + 1);
    out += "\n";
    for (Eigen::Index i = 0; i < space.coords.rows(); ++i) {
        out += csv_field(space.labels[static_cast<std::size_t>(i)]);
        for (Eigen::Index k = 0; k < space.coords.cols(); ++k)
            out += "," + format_real(space.coords(i, k));
        out += "\n";
    }
    return out;
}

PerspectiveSpace read_perspectives(const fs::path& path) {
    const auto [header, rows] = labeled_table(path);
    PerspectiveSpace space;
    space.coords.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(header.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        space.labels.push_back(rows[i].first);
        for (std::size_t k = 0; k < header.size(); ++k)
            space.coords(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i].second[k];
    }
    space.selected_dim = header.size();
    return space;
}

std::string spectrum_csv(const Eigen::VectorXd& gram_eigenvalues, std::span<const double> distance_singular_values) {
    std::string out = "index,gram_eigenvalue,distance_singular_value\n";
    const std::size_t count = std::max(static_cast<std::size_t>(gram_eigenvalues.size()), distance_singular_values.size());
    for (std::size_t i = 0; i < count; ++i) {
        out += std::to_string(i + 1) + ",";
        out += i < static_cast<std::size_t>(gram_eigenvalues.size())
                   ? format_real(gram_eigenvalues(static_cast<Eigen::Index>(i)))
                   : std::string();
        out += ",";
        out += i < distance_singular_values.size() ? format_real(distance_singular_values[i]) : std::string();
        out += "\n";
    }
    return out;
}

std::string curve_csv(const LearningCurve& curve, std::string_view metric) {
    std::string out = "n,m,trial,metric,value\n";
    for (const auto& cell : curve.cells)
        for (std::size_t t = 0; t < cell.values.size(); ++t)
            out += std::to_string(cell.n) + "," + std::to_string(cell.m) + "," + std::to_string(t) + "," +
                   std::string(metric) + "," + format_real(cell.values[t]) + "\n";
    return out;
}

std::string report_csv(const sim::ConvergenceReport& report) {
    std::string out;
    for (const auto& axis : report.axis_names)
        out += axis + ",";
    out += "trial,metric,value\n";
    for (const auto& cell : report.cells) {
        std::string prefix;
        for (const auto& axis : report.axis_names)
            prefix += format_real(cell.axis(axis)) + ",";
        for (std::size_t t = 0; t < cell.samples.size(); ++t)
            out += prefix + std::to_string(t) + "," + report.tracked + "," + format_real(cell.samples[t]) + "\n";
    }
    return out;
}

nlohmann::json report_summary(const sim::ConvergenceReport& report) {
    json summary;
    summary["experiment"] = report.experiment;
    summary["tracked"] = report.tracked;
    summary["cells"] = json::array();
    for (const auto& cell : report.cells) {
        json c;
        for (const auto& [name, value] : cell.axes)
            c[name] = value;
        c["median"] = cell.median;
        c["q25"] = cell.q25;
        c["q75"] = cell.q75;
        c["trials"] = cell.samples.size();
        for (const auto& [name, value] : cell.extras)
            c[name] = value;
        summary["cells"].push_back(std::move(c));
    }
    summary["verdicts"] = json::array();
    for (const auto& verdict : report.verdicts)
        summary["verdicts"].push_back({{"name", verdict.name}, {"passed", verdict.passed}, {"detail", verdict.detail}});
    return summary;
}

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1)
        throw Error("IoError", "SHA-256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < length; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xF];
    }
    return out;
}

std::string file_sha256(const fs::path& path) { return sha256_hex(read_text(path)); }

Workspace::Workspace(fs::path root) : root_(std::move(root)), manifest_(json::object()) {
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (!fs::is_directory(root_))
        throw Error("IoError", "cannot create workspace '" + root_.string() + "'");
    const fs::path manifest_path = root_ / "manifest.json";
    if (fs::exists(manifest_path)) {
        try {
            manifest_ = json::parse(read_text(manifest_path));
        } catch (const json::parse_error& e) {
            throw Error("ParseError", manifest_path.string() + ": " + e.what());
        }
    }
}

fs::path Workspace::write_artifact(const std::string& key, std::string_view file_name, std::string_view content) {
    const fs::path target = root_ / file_name;
    write_text(target, content);
    manifest_["artifacts"][key] = {{"file", std::string(file_name)}, {"sha256", sha256_hex(content)}};
    return target;
}

void Workspace::record_input(const std::string& key, const fs::path& input) {
    manifest_["inputs"][key] = {{"path", fs::absolute(input).lexically_normal().generic_string()}, {"sha256", file_sha256(input)}};
}

void Workspace::save_manifest() const {
    write_text(root_ / "manifest.json", manifest_.dump(2) + "\n");
}

} // namespace dkps::io
