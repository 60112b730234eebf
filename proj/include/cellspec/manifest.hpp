#pragma once

// Run manifests: what a command read, what it wrote, and with which settings.
// No timestamps, so equal runs give equal manifests.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cellspec/digest.hpp"
#include "cellspec/error.hpp"

namespace cellspec {

inline constexpr std::string_view kToolName = "cellspec";
inline constexpr std::string_view kToolVersion = "0.3.0";
inline constexpr std::string_view kManifestSchemaVersion = "cellspec-manifest/1";

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, std::string> inputs;   // path -> sha256
  std::map<std::string, std::string> outputs;  // path -> sha256
  nlohmann::json counters = nlohmann::json::object();

  /// Digests a file, or every regular file below a directory.
  static void digest_into(std::map<std::string, std::string>& into, const std::filesystem::path& p,
                          const std::filesystem::path& relative_to = {}) {
    std::error_code ec;
    auto key = [&](const std::filesystem::path& f) {
      return (relative_to.empty() ? f : std::filesystem::relative(f, relative_to)).generic_string();
    };
    if (std::filesystem::is_directory(p, ec)) {
      for (const auto& e : std::filesystem::recursive_directory_iterator(p)) {
        if (e.is_regular_file()) into[key(e.path())] = file_sha256(e.path());
      }
    } else if (std::filesystem::is_regular_file(p, ec)) {
      into[key(p)] = file_sha256(p);
    } else {
      throw Error(ErrorCode::IoError, "cannot digest missing path " + p.string());
    }
  }

  void add_input(const std::filesystem::path& p) { digest_into(inputs, p); }
  void add_output(const std::filesystem::path& p, const std::filesystem::path& relative_to = {}) {
    digest_into(outputs, p, relative_to);
  }

  nlohmann::json to_json() const {
    return {{"schema_version", kManifestSchemaVersion},
            {"tool", kToolName},
            {"tool_version", kToolVersion},
            {"command", command},
            {"config", config},
            {"inputs", inputs},
            {"outputs", outputs},
            {"counters", counters}};
  }

  static RunManifest from_json(const nlohmann::json& j) {
    if (j.value("schema_version", "") != kManifestSchemaVersion) {
      throw Error(ErrorCode::SchemaViolation, "not a manifest file");
    }
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config");
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    m.counters = j.at("counters");
    return m;
  }

  /// Same command, config and inputs; outputs are not compared.
  bool same_run(const RunManifest& o) const {
    return command == o.command && config == o.config && inputs == o.inputs;
  }

  void write(const std::filesystem::path& file) const { write_file(file, to_json().dump(2) + "\n"); }
};

}  // namespace cellspec
