#include "run_config.hpp"

#include <fstream>

#include "tba/container.hpp"
#include "tba/error.hpp"

namespace tba::cli {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ArgumentError*>(&e) || dynamic_cast<const PlanError*>(&e) ||
      dynamic_cast<const SpecError*>(&e)) {
    return kExitUsage;
  }
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const DimensionError*>(&e) || dynamic_cast<const std::filesystem::filesystem_error*>(&e)) {
    return kExitFile;
  }
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  return kExitInternal;
}

std::string file_fingerprint(const std::filesystem::path& path) { return fingerprint(read_file(path)); }

RunRecord::RunRecord(std::string command, std::filesystem::path out_dir)
    : command_(std::move(command)), out_dir_(std::move(out_dir)) {
  std::filesystem::create_directories(out_dir_);
}

void RunRecord::add_input(const std::string& role, const std::filesystem::path& path) {
  inputs_.emplace_back(role, path);
}

void RunRecord::add_output(const std::filesystem::path& path) { outputs_.push_back(path); }

void RunRecord::write() const {
  nlohmann::json j;
  j["command"] = command_;
  j["config"] = config_;
  j["results"] = results_;
  nlohmann::json inputs = nlohmann::json::array();
  for (const auto& [role, path] : inputs_) {
    inputs.push_back({{"role", role}, {"path", path.string()}, {"fingerprint", file_fingerprint(path)}});
  }
  j["inputs"] = inputs;
  nlohmann::json outputs = nlohmann::json::array();
  for (const auto& path : outputs_) {
    outputs.push_back({{"file", path.filename().string()}, {"fingerprint", file_fingerprint(path)}});
  }
  j["outputs"] = outputs;
  const auto path = out_dir_ / "run.json";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

}  // namespace tba::cli
