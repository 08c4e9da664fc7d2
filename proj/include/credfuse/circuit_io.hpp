#pragma once

#include <filesystem>
#include <json.hpp>

#include "credfuse/circuit.hpp"

namespace credfuse {

inline constexpr int kModelSchemaVersion = 1;

/// {schema_version, K, M, root, nodes:[{id, kind, children?, weight_logits?, var?, dist?}]}
nlohmann::json circuit_to_json(const Circuit& circuit);

/// Accepts node ids in any order as long as the graph is acyclic; the
/// result is renumbered into topological arena order. Throws FormatError on
/// schema problems, cycles, or a circuit that fails the structural
/// validators.
Circuit circuit_from_json(const nlohmann::json& doc);

void save_circuit(const Circuit& circuit, const std::filesystem::path& path);
Circuit load_circuit(const std::filesystem::path& path);

/// Reads a whole JSON document, mapping IO and parse failures onto the
/// library's error types.
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const nlohmann::json& doc, const std::filesystem::path& path);

}  // namespace credfuse
