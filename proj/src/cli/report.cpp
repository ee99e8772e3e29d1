#include "demix/cli/report.hpp"

#include "demix/error.hpp"
#include "demix/numerics/checkpoint.hpp"

#include <charconv>
#include <cmath>

namespace demix {

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = nlohmann::json::object();
  j["command"] = r.command;
  j["mode"] = r.mode;
  j["config"] = r.config;
  j["config_hash"] = r.config_hash;
  j["checkpoint_id"] = r.checkpoint_id;
  j["prior"] = r.prior;
  j["tables"] = nlohmann::json::object();
  for (const auto& [name, m] : r.tables) j["tables"][name] = m;
  j["extra"] = r.extra;
}

void from_json(const nlohmann::json& j, EvalReport& r) {
  try {
    r.command = j.at("command").get<std::string>();
    r.mode = j.at("mode").get<std::string>();
    r.config = j.at("config");
    r.config_hash = j.at("config_hash").get<std::string>();
    r.checkpoint_id = j.at("checkpoint_id").get<std::string>();
    r.prior = j.at("prior");
    r.tables.clear();
    for (const auto& [name, m] : j.at("tables").items()) r.tables[name] = m.get<LabeledMatrix>();
    r.extra = j.at("extra");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eE") == std::string::npos) s += ".0";
  return s;
}

std::string matrix_csv(const LabeledMatrix& m) {
  std::string out = "dataset";
  for (const auto& c : m.cols) out += "," + c;
  out += "\n";
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    out += m.rows[i];
    for (double v : m.values.at(i)) out += "," + format_number(v);
    out += "\n";
  }
  return out;
}

std::vector<std::filesystem::path> emit_report(const EvalReport& report, ReportFormat format,
                                               const std::filesystem::path& dir, const std::string& stem) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create report directory '" + dir.string() + "': " + ec.message());
  std::vector<std::filesystem::path> written;
  if (format == ReportFormat::json) {
    auto path = dir / (stem + ".json");
    write_file_atomic(path, nlohmann::json(report).dump(2) + "\n");
    written.push_back(path);
  } else {
    for (const auto& [name, m] : report.tables) {
      auto path = dir / (stem + "_" + name + ".csv");
      write_file_atomic(path, matrix_csv(m));
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace demix
