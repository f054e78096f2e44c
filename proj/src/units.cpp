#include "raudit/units.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include <openssl/evp.h>

#include "raudit/error.hpp"

namespace raudit {
namespace {

constexpr std::size_t kMaxReportedProblems = 20;

std::vector<std::vector<std::string>> split_csv(std::string_view text) {
  if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field.push_back(c);
      any = true;
    }
  }
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

bool parse_double(std::string_view s, double& out) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

std::string error_list(std::string_view source, const std::vector<std::string>& problems) {
  std::ostringstream os;
  os << source << ": " << problems.size() << " problem(s)";
  for (std::size_t i = 0; i < problems.size() && i < kMaxReportedProblems; ++i)
    os << "\n  " << problems[i];
  if (problems.size() > kMaxReportedProblems) os << "\n  ...";
  return os.str();
}

}  // namespace

bool UnitTable::operator==(const UnitTable& other) const {
  return ids == other.ids && blocks == other.blocks && clusters == other.clusters &&
         locations == other.locations && feature_names == other.feature_names &&
         features.rows() == other.features.rows() &&
         features.cols() == other.features.cols() && features == other.features &&
         treated == other.treated && selected == other.selected &&
         responses == other.responses;
}

void check_table(const UnitTable& units) {
  std::vector<std::string> problems;
  const std::size_t n = units.n();
  if (n == 0) problems.emplace_back("no data rows");
  if (units.d() < 1) problems.emplace_back("feature dimension must be at least 1");
  if (static_cast<std::size_t>(units.features.rows()) != n)
    problems.emplace_back("feature matrix row count does not match unit count");
  if (units.feature_names.size() != units.d())
    problems.emplace_back("feature name count does not match feature dimension");
  auto check_len = [&](const auto& col, const char* what) {
    if (col && col->size() != n) problems.push_back(std::string(what) + " column length mismatch");
  };
  check_len(units.blocks, "block");
  check_len(units.clusters, "cluster");
  check_len(units.locations, "location");
  check_len(units.treated, "treated");
  check_len(units.selected, "selected");
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < n; ++i) {
    if (auto [it, fresh] = seen.emplace(units.ids[i], i); !fresh)
      problems.push_back("duplicate unit id '" + units.ids[i] + "' at rows " +
                         std::to_string(it->second + 1) + " and " + std::to_string(i + 1));
  }
  if (static_cast<std::size_t>(units.features.rows()) == n) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < units.d(); ++j)
        if (!std::isfinite(units.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))))
          problems.push_back("row " + std::to_string(i + 1) + " column '" +
                             (j < units.feature_names.size() ? units.feature_names[j] : "?") +
                             "': non-finite feature value");
  }
  auto check_binary = [&](const std::optional<Labels>& col, const std::string& what) {
    if (!col) return;
    for (auto v : *col)
      if (v > 1) {
        problems.push_back(what + " labels must be 0 or 1");
        return;
      }
  };
  check_binary(units.treated, "treated");
  check_binary(units.selected, "selected");
  std::map<std::string, int> response_names;
  for (const auto& r : units.responses) {
    if (++response_names[r.name] > 1) problems.push_back("duplicate response column '" + r.name + "'");
    if (r.observed.size() != n) problems.push_back("response '" + r.name + "' length mismatch");
    check_binary(std::optional<Labels>(r.observed), "response '" + r.name + "'");
  }
  if (!problems.empty()) throw InputError(error_list("unit table", problems));
}

UnitTable parse_units(std::string_view text, const ColumnMapping& mapping, std::string_view source) {
  auto rows = split_csv(text);
  if (rows.empty()) throw InputError(std::string(source) + ": no header row");
  const auto header = rows.front();
  if (rows.size() == 1) throw InputError(std::string(source) + ": no data rows");

  std::unordered_map<std::string, std::size_t> column;
  for (std::size_t j = 0; j < header.size(); ++j) column.emplace(header[j], j);

  std::vector<std::string> problems;
  auto locate = [&](const std::string& role, const std::string& name) -> std::size_t {
    auto it = column.find(name);
    if (it == column.end()) {
      problems.push_back("column mapping '" + role + "' -> '" + name + "' not found in header");
      return 0;
    }
    return it->second;
  };
  auto locate_opt = [&](const std::string& role, const std::optional<std::string>& name)
      -> std::optional<std::size_t> {
    if (!name) return std::nullopt;
    return locate(role, *name);
  };

  const std::size_t id_col = locate("id", mapping.id);
  const auto block_col = locate_opt("block", mapping.block);
  const auto cluster_col = locate_opt("cluster", mapping.cluster);
  const auto lat_col = locate_opt("lat", mapping.lat);
  const auto lon_col = locate_opt("lon", mapping.lon);
  const auto treated_col = locate_opt("treated", mapping.treated);
  const auto selected_col = locate_opt("selected", mapping.selected);
  if (mapping.features.empty()) problems.emplace_back("column mapping lists no feature columns");
  std::vector<std::size_t> feature_cols;
  for (const auto& f : mapping.features) feature_cols.push_back(locate("features", f));
  std::vector<std::size_t> response_cols;
  for (const auto& r : mapping.responses) response_cols.push_back(locate("responses", r));
  if (lat_col.has_value() != lon_col.has_value())
    problems.emplace_back("column mapping must bind both 'lat' and 'lon' or neither");
  if (!problems.empty()) throw InputError(error_list(source, problems));

  const std::size_t n = rows.size() - 1;
  UnitTable units;
  units.ids.reserve(n);
  units.feature_names = mapping.features;
  units.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(feature_cols.size()));
  if (block_col) units.blocks.emplace();
  if (cluster_col) units.clusters.emplace();
  if (lat_col) units.locations.emplace();
  if (treated_col) units.treated.emplace();
  if (selected_col) units.selected.emplace();
  for (const auto& r : mapping.responses) units.responses.push_back({r, {}});

  auto binary = [&](const std::string& cell, std::size_t row, const std::string& col) -> std::uint8_t {
    if (cell == "0") return 0;
    if (cell == "1") return 1;
    problems.push_back("row " + std::to_string(row) + " column '" + col + "': expected 0 or 1, got '" +
                       cell + "'");
    return 0;
  };

  for (std::size_t r = 0; r < n; ++r) {
    const auto& cells = rows[r + 1];
    const std::size_t line = r + 1;
    if (cells.size() != header.size()) {
      problems.push_back("row " + std::to_string(line) + ": expected " + std::to_string(header.size()) +
                         " fields, got " + std::to_string(cells.size()));
      continue;
    }
    units.ids.push_back(cells[id_col]);
    if (cells[id_col].empty()) problems.push_back("row " + std::to_string(line) + ": empty unit id");
    if (block_col) units.blocks->push_back(cells[*block_col]);
    if (cluster_col) units.clusters->push_back(cells[*cluster_col]);
    if (lat_col) {
      Location loc;
      if (!parse_double(cells[*lat_col], loc.lat) || !parse_double(cells[*lon_col], loc.lon))
        problems.push_back("row " + std::to_string(line) + ": unparseable location");
      units.locations->push_back(loc);
    }
    for (std::size_t j = 0; j < feature_cols.size(); ++j) {
      const auto& cell = cells[feature_cols[j]];
      double v = 0.0;
      const auto at = "row " + std::to_string(line) + " column '" + mapping.features[j] + "'";
      if (!parse_double(cell, v)) {
        problems.push_back(at + (cell.empty() ? ": missing feature value" : ": unparseable value '" + cell + "'"));
      } else if (!std::isfinite(v)) {
        problems.push_back(at + ": non-finite feature value");
      }
      units.features(static_cast<Eigen::Index>(units.ids.size() - 1), static_cast<Eigen::Index>(j)) = v;
    }
    if (treated_col) units.treated->push_back(binary(cells[*treated_col], line, *mapping.treated));
    if (selected_col) units.selected->push_back(binary(cells[*selected_col], line, *mapping.selected));
    for (std::size_t k = 0; k < response_cols.size(); ++k)
      units.responses[k].observed.push_back(binary(cells[response_cols[k]], line, mapping.responses[k]));
  }
  if (!problems.empty()) throw InputError(error_list(source, problems));
  try {
    check_table(units);
  } catch (const InputError& e) {
    throw InputError(std::string(source) + ": " + e.what());
  }
  return units;
}

UnitTable load_units(const std::filesystem::path& path, const ColumnMapping& mapping) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open data file '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_units(buffer.str(), mapping, path.string());
}

ColumnMapping canonical_mapping(const UnitTable& units) {
  ColumnMapping m;
  m.id = "unit_id";
  if (units.blocks) m.block = "block";
  if (units.clusters) m.cluster = "cluster";
  if (units.locations) {
    m.lat = "lat";
    m.lon = "lon";
  }
  m.features = units.feature_names;
  if (units.treated) m.treated = "treated";
  if (units.selected) m.selected = "selected";
  for (const auto& r : units.responses) m.responses.push_back(r.name);
  return m;
}

std::string format_units(const UnitTable& units) {
  const auto mapping = canonical_mapping(units);
  std::vector<std::string> header{mapping.id};
  if (mapping.block) header.push_back(*mapping.block);
  if (mapping.cluster) header.push_back(*mapping.cluster);
  if (mapping.lat) {
    header.push_back(*mapping.lat);
    header.push_back(*mapping.lon);
  }
  header.insert(header.end(), mapping.features.begin(), mapping.features.end());
  if (mapping.treated) header.push_back(*mapping.treated);
  if (mapping.selected) header.push_back(*mapping.selected);
  header.insert(header.end(), mapping.responses.begin(), mapping.responses.end());
  {
    std::vector<std::string> sorted = header;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw InputError("column names collide with reserved names when serializing");
  }

  std::ostringstream os;
  for (std::size_t j = 0; j < header.size(); ++j) os << (j ? "," : "") << quote_if_needed(header[j]);
  os << '\n';
  for (std::size_t i = 0; i < units.n(); ++i) {
    os << quote_if_needed(units.ids[i]);
    if (units.blocks) os << ',' << quote_if_needed((*units.blocks)[i]);
    if (units.clusters) os << ',' << quote_if_needed((*units.clusters)[i]);
    if (units.locations)
      os << ',' << format_double((*units.locations)[i].lat) << ',' << format_double((*units.locations)[i].lon);
    for (std::size_t j = 0; j < units.d(); ++j)
      os << ',' << format_double(units.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    if (units.treated) os << ',' << int((*units.treated)[i]);
    if (units.selected) os << ',' << int((*units.selected)[i]);
    for (const auto& r : units.responses) os << ',' << int(r.observed[i]);
    os << '\n';
  }
  return os.str();
}

void write_units(const UnitTable& units, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << format_units(units);
}

std::string feature_hash(const UnitTable& units) {
  std::vector<unsigned char> bytes;
  bytes.reserve(16 + 8 * static_cast<std::size_t>(units.features.size()));
  auto put_u64 = [&](std::uint64_t v) {
    for (int k = 0; k < 8; ++k) bytes.push_back(static_cast<unsigned char>(v >> (8 * k)));
  };
  put_u64(units.n());
  put_u64(units.d());
  for (Eigen::Index i = 0; i < units.features.rows(); ++i)
    for (Eigen::Index j = 0; j < units.features.cols(); ++j) {
      std::uint64_t bits = 0;
      const double v = units.features(i, j);
      std::memcpy(&bits, &v, sizeof bits);
      put_u64(bits);
    }
  return sha256_hex(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 digest failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int k = 0; k < len; ++k) {
    out.push_back(hex[digest[k] >> 4]);
    out.push_back(hex[digest[k] & 0xF]);
  }
  return out;
}

nlohmann::json ingestion_sidecar(const UnitTable& units, const ColumnMapping& mapping,
                                 std::string_view source, std::string_view provenance) {
  nlohmann::json roles = {{"id", mapping.id}, {"features", mapping.features}, {"responses", mapping.responses}};
  auto opt = [&](const char* key, const std::optional<std::string>& v) {
    roles[key] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  opt("block", mapping.block);
  opt("cluster", mapping.cluster);
  opt("lat", mapping.lat);
  opt("lon", mapping.lon);
  opt("treated", mapping.treated);
  opt("selected", mapping.selected);
  nlohmann::json labels = nlohmann::json::object();
  if (units.treated)
    labels["treated_count"] = std::count(units.treated->begin(), units.treated->end(), 1);
  if (units.selected)
    labels["selected_count"] = std::count(units.selected->begin(), units.selected->end(), 1);
  for (const auto& r : units.responses)
    labels["observed_count:" + r.name] = std::count(r.observed.begin(), r.observed.end(), 1);
  return {
      {"schema", "raudit.ingestion/1"},
      {"source", std::string(source)},
      {"n", units.n()},
      {"d", units.d()},
      {"feature_names", units.feature_names},
      {"feature_hash", feature_hash(units)},
      {"feature_hash_algorithm", "sha256(n:u64le, d:u64le, features row-major f64le)"},
      {"columns", roles},
      {"labels", labels},
      {"provenance", std::string(provenance)},
  };
}

Standardized standardize_features(const UnitTable& units) {
  Standardized out{units, {}, {}, {}};
  const auto n = units.features.rows();
  if (n < 2) throw InputError("standardization needs at least 2 units");
  for (Eigen::Index j = 0; j < units.features.cols(); ++j) {
    auto col = out.units.features.col(j);
    const double mean = col.mean();
    const double sd = std::sqrt((col.array() - mean).square().sum() / static_cast<double>(n));
    out.means.push_back(mean);
    out.sds.push_back(sd);
    if (sd <= 1e-12 * std::max(1.0, std::abs(mean))) {
      col.setZero();
      out.constant_columns.push_back(static_cast<std::size_t>(j));
    } else {
      col = (col.array() - mean) / sd;
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> cluster_members(const UnitTable& units) {
  if (!units.clusters) throw InputError("unit table has no cluster column");
  std::vector<std::vector<std::size_t>> members;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < units.n(); ++i) {
    auto [it, fresh] = index.emplace((*units.clusters)[i], members.size());
    if (fresh) members.emplace_back();
    members[it->second].push_back(i);
  }
  return members;
}

UnitTable aggregate_by_cluster(const UnitTable& units) {
  const auto members = cluster_members(units);
  UnitTable out;
  out.feature_names = units.feature_names;
  out.features.resize(static_cast<Eigen::Index>(members.size()), units.features.cols());
  if (units.blocks) out.blocks.emplace();
  if (units.locations) out.locations.emplace();
  if (units.treated) out.treated.emplace();
  if (units.selected) out.selected.emplace();
  std::vector<std::string> problems;
  for (std::size_t c = 0; c < members.size(); ++c) {
    const auto& rows = members[c];
    const std::string& name = (*units.clusters)[rows.front()];
    out.ids.push_back(name);
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(units.features.cols());
    Location loc;
    for (auto i : rows) {
      sum += units.features.row(static_cast<Eigen::Index>(i));
      if (units.locations) {
        loc.lat += (*units.locations)[i].lat;
        loc.lon += (*units.locations)[i].lon;
      }
    }
    const double k = static_cast<double>(rows.size());
    out.features.row(static_cast<Eigen::Index>(c)) = sum / k;
    if (units.locations) out.locations->push_back({loc.lat / k, loc.lon / k});
    auto same = [&](const auto& col, const char* what) {
      for (auto i : rows)
        if (col[i] != col[rows.front()]) {
          problems.push_back("cluster '" + name + "' mixes " + what);
          break;
        }
      return col[rows.front()];
    };
    if (units.blocks) out.blocks->push_back(same(*units.blocks, "blocks"));
    if (units.treated) out.treated->push_back(same(*units.treated, "treatment labels"));
    if (units.selected) out.selected->push_back(same(*units.selected, "selection labels"));
  }
  if (!problems.empty()) throw InputError(error_list("cluster aggregation", problems));
  return out;
}

UnitTable select_rows(const UnitTable& units, const std::vector<std::size_t>& rows) {
  UnitTable out;
  out.feature_names = units.feature_names;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), units.features.cols());
  if (units.blocks) out.blocks.emplace();
  if (units.clusters) out.clusters.emplace();
  if (units.locations) out.locations.emplace();
  if (units.treated) out.treated.emplace();
  if (units.selected) out.selected.emplace();
  for (const auto& r : units.responses) out.responses.push_back({r.name, {}});
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto i = rows[k];
    out.ids.push_back(units.ids[i]);
    out.features.row(static_cast<Eigen::Index>(k)) = units.features.row(static_cast<Eigen::Index>(i));
    if (units.blocks) out.blocks->push_back((*units.blocks)[i]);
    if (units.clusters) out.clusters->push_back((*units.clusters)[i]);
    if (units.locations) out.locations->push_back((*units.locations)[i]);
    if (units.treated) out.treated->push_back((*units.treated)[i]);
    if (units.selected) out.selected->push_back((*units.selected)[i]);
    for (std::size_t j = 0; j < units.responses.size(); ++j)
      out.responses[j].observed.push_back(units.responses[j].observed[i]);
  }
  return out;
}

}  // namespace raudit
