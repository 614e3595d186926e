// JSON, JSONL and CSV persistence. Every JSON document carries
// "schema_version".
#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "beamvem/dataset.hpp"
#include "beamvem/frame.hpp"
#include "beamvem/training.hpp"

namespace beamvem::io {

using json = nlohmann::json;

inline constexpr int schema_version = 1;

// Malformed or schema-violating input.
class SchemaError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

void check_schema(const json& doc, const std::string& what);

json frame_to_json(const FrameModel& model);
FrameModel frame_from_json(const json& doc);

json solution_to_json(const GlobalSolution& solution);
// Structural check of a solution document.
void validate_solution(const json& doc);

json record_to_json(const DatasetRecord& record);
DatasetRecord record_from_json(const json& doc);

json portico_to_json(const PorticoConfig& config);
PorticoConfig portico_from_json(const json& doc);

json training_config_to_json(const TrainingConfig& config, const SobolevConfig& sobolev);
// Missing keys keep their defaults.
void training_config_from_json(const json& doc, TrainingConfig& config, SobolevConfig& sobolev);

json model_to_json(const SurrogateModel& model);
SurrogateModel model_from_json(const json& doc);

std::string history_csv(const std::vector<EpochRecord>& history);

json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& doc);
std::vector<DatasetRecord> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<DatasetRecord>& records);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace beamvem::io
