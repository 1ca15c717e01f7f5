#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "talign/error.hpp"

namespace talign::cli {

// Schema violation in a user-supplied JSON document; what() starts with the
// offending field path.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& path, const std::string& what) : Error(path + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// Read-only view of a JSON value that remembers where it came from.
class Field {
 public:
  Field(const nlohmann::json& j, std::string path) : j_(&j), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }
  const nlohmann::json& raw() const noexcept { return *j_; }

  bool has(std::string_view key) const { return j_->is_object() && j_->contains(key); }

  Field at(std::string_view key) const {
    if (!j_->is_object()) throw SchemaError(path_, "expected an object");
    auto it = j_->find(key);
    if (it == j_->end()) throw SchemaError(child(key), "missing required field");
    return Field(*it, child(key));
  }

  Field at(std::size_t i) const { return Field((*j_)[i], path_ + "[" + std::to_string(i) + "]"); }

  std::size_t size() const {
    if (!j_->is_array()) throw SchemaError(path_, "expected an array");
    return j_->size();
  }

  double number() const {
    if (!j_->is_number()) throw SchemaError(path_, "expected a number");
    return j_->get<double>();
  }

  long integer() const {
    if (!j_->is_number_integer()) throw SchemaError(path_, "expected an integer");
    return j_->get<long>();
  }

  std::size_t index() const {
    const long v = integer();
    if (v < 0) throw SchemaError(path_, "expected a non-negative integer");
    return static_cast<std::size_t>(v);
  }

  bool boolean() const {
    if (!j_->is_boolean()) throw SchemaError(path_, "expected a boolean");
    return j_->get<bool>();
  }

  std::string string() const {
    if (!j_->is_string()) throw SchemaError(path_, "expected a string");
    return j_->get<std::string>();
  }

  std::vector<double> numbers() const {
    std::vector<double> out(size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = at(i).number();
    return out;
  }

 private:
  std::string child(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  const nlohmann::json* j_;
  std::string path_;
};

}  // namespace talign::cli
