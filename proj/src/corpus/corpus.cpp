#include "demix/corpus/corpus.hpp"

#include "demix/error.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>

namespace demix {

CorpusFormat parse_corpus_format(const std::string& name) {
  if (name == "jsonl") return CorpusFormat::jsonl;
  if (name == "dirs") return CorpusFormat::dirs;
  throw ConfigError("format", "unknown corpus format '" + name + "' (expected jsonl or dirs)");
}

Corpus::Corpus(DomainSet domains, std::vector<std::vector<Document>> documents)
    : domains_(std::move(domains)), documents_(std::move(documents)) {
  if (domains_.empty()) throw DataError("empty corpus");
  if (documents_.size() != domains_.size()) throw DataError("one document list per domain required");
  for (std::size_t d = 0; d < domains_.size(); ++d) {
    if (documents_[d].empty()) throw DataError("empty domain '" + domains_.name(d) + "'");
    std::size_t tokens = 0;
    for (auto& doc : documents_[d]) {
      doc.domain = domains_.label(d);
      tokens += doc.text.size();
    }
    token_counts_.push_back(tokens);
  }
}

std::size_t Corpus::document_count() const {
  std::size_t n = 0;
  for (const auto& docs : documents_) n += docs.size();
  return n;
}

Corpus Corpus::subset(const std::vector<std::string>& names) const {
  std::vector<std::vector<Document>> docs;
  for (const auto& name : names) docs.push_back(documents_.at(domains_.label(name).index));
  return Corpus(DomainSet(names), std::move(docs));
}

namespace {

Corpus load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus '" + path.string() + "'");
  std::map<std::string, std::vector<Document>> grouped;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("line " + std::to_string(lineno) + ": invalid JSON: " + e.what());
    }
    if (!obj.is_object() || !obj.contains("domain") || !obj["domain"].is_string()) {
      throw DataError("line " + std::to_string(lineno) + ": missing domain field");
    }
    if (!obj.contains("text") || !obj["text"].is_string()) {
      throw DataError("line " + std::to_string(lineno) + ": missing text field");
    }
    Document doc;
    doc.text = obj["text"].get<std::string>();
    const std::string domain = obj["domain"].get<std::string>();
    doc.id = obj.contains("id") && obj["id"].is_string() ? obj["id"].get<std::string>()
                                                         : domain + ":" + std::to_string(lineno);
    grouped[domain].push_back(std::move(doc));
  }
  if (grouped.empty()) throw DataError("empty corpus");
  std::vector<std::string> names;
  std::vector<std::vector<Document>> docs;
  for (auto& [name, list] : grouped) {
    names.push_back(name);
    docs.push_back(std::move(list));
  }
  return Corpus(DomainSet(names), std::move(docs));
}

Corpus load_dirs(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DataError("corpus root '" + root.string() + "' is not a directory");
  std::vector<fs::path> domain_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) domain_dirs.push_back(e.path());
  }
  std::sort(domain_dirs.begin(), domain_dirs.end());
  if (domain_dirs.empty()) throw DataError("empty corpus");
  std::vector<std::string> names;
  std::vector<std::vector<Document>> docs;
  for (const auto& dir : domain_dirs) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    const std::string name = dir.filename().string();
    if (files.empty()) throw DataError("empty domain '" + name + "'");
    std::vector<Document> list;
    for (const auto& f : files) {
      std::ifstream in(f, std::ios::binary);
      std::ostringstream ss;
      ss << in.rdbuf();
      list.push_back(Document{ss.str(), {}, name + "/" + f.filename().string()});
    }
    names.push_back(name);
    docs.push_back(std::move(list));
  }
  return Corpus(DomainSet(names), std::move(docs));
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format) {
  switch (format) {
    case CorpusFormat::jsonl:
      return load_jsonl(path);
    case CorpusFormat::dirs:
      return load_dirs(path);
  }
  throw ConfigError("format", "unknown corpus format");
}

void write_corpus_jsonl(const Corpus& corpus, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  for (std::size_t d = 0; d < corpus.domains().size(); ++d) {
    for (const auto& doc : corpus.documents(d)) {
      nlohmann::ordered_json obj;
      obj["domain"] = corpus.domains().name(d);
      obj["id"] = doc.id;
      obj["text"] = doc.text;
      out << obj.dump() << '\n';
    }
  }
}

}  // namespace demix
