#pragma once

// Metric files: CSV tables and JSON reports carrying a config echo and
// git-style content hashes of the input files.

#include <openssl/sha.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <variant>

#include <json.hpp>

#include "dma/common.hpp"

namespace dma {

// Shortest decimal that reads back to the same double.
inline std::string format_number(double v) {
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

class CsvWriter {
 public:
  using Cell = std::variant<std::string, double, std::int64_t, std::uint64_t>;

  CsvWriter(const std::string& path, std::vector<std::string> header) : path_(path), columns_(header.size()) {
    require(!header.empty(), "csv header must not be empty");
    out_.open(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out_), "cannot write metrics file ", path);
    write_cells(header);
  }

  void row(const std::vector<Cell>& cells) {
    require(cells.size() == columns_, "csv row has ", cells.size(), " cells, header has ", columns_);
    std::vector<std::string> text;
    for (const auto& c : cells)
      text.push_back(std::visit(
          [](const auto& v) -> std::string {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, std::string>) return v;
            else if constexpr (std::is_same_v<T, double>) return format_number(v);
            else return std::to_string(v);
          },
          c));
    write_cells(text);
  }

  void close() {
    out_.close();
    require(!out_.fail(), "failed writing ", path_);
  }

 private:
  static std::string escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + '"';
  }

  void write_cells(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << escape(cells[i]);
    out_ << '\n';
    require(static_cast<bool>(out_), "failed writing ", path_);
  }

  std::string path_;
  std::size_t columns_;
  std::ofstream out_;
};

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<CsvWriter::Cell>>& rows) {
  CsvWriter w(path, header);
  for (const auto& r : rows) w.row(r);
  w.close();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot read ", path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// SHA-1 of "blob <size>\0<content>", the hash git assigns to a file.
inline std::string git_blob_hash(std::string_view content) {
  std::string data = "blob " + std::to_string(content.size());
  data.push_back('\0');
  data.append(content);
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(data.data()), data.size(), digest);
  std::ostringstream hex;
  for (unsigned char b : digest) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(b);
  return hex.str();
}

inline std::string file_hash(const std::string& path) { return git_blob_hash(read_file(path)); }

// Hash over several inputs: the blob hashes joined in the given order.
inline nlohmann::json input_hashes(const std::vector<std::string>& paths) {
  nlohmann::json files = nlohmann::json::array();
  std::string joined;
  for (const auto& p : paths) {
    const std::string h = file_hash(p);
    files.push_back({{"path", p}, {"sha1", h}});
    joined += h + "\n";
  }
  return {{"files", files}, {"combined", git_blob_hash(joined)}};
}

inline void write_text(const std::string& path, const std::string& text) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), "cannot write ", path);
  out << text;
  out.close();
  require(!out.fail(), "failed writing ", path);
}

inline void write_json(const std::string& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

// A report: the payload plus the config echo and input hashes.
inline nlohmann::json make_report(const std::string& command, const nlohmann::json& config,
                                  const std::vector<std::string>& inputs, nlohmann::json payload) {
  return {{"command", command}, {"config", config}, {"inputs", input_hashes(inputs)}, {"result", std::move(payload)}};
}

}  // namespace dma
