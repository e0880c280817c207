#pragma once

#include <filesystem>
#include <span>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

namespace scadapter {

using json = nlohmann::json;

// Matrices serialize as {"rows", "cols", "data"} with data in row-major order.
// nlohmann/json prints doubles in shortest round-trip form, so values survive
// save/load bit-exactly.
json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const json& j);
json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const json& j);

json read_json_file(const std::filesystem::path& path);
void write_json_file(const json& doc, const std::filesystem::path& path, int indent = 1);
void write_text_file(const std::string& text, const std::filesystem::path& path);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(const std::string& text);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace scadapter
