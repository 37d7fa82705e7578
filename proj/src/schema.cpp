#include <string>
#include <vector>

#include "unmemo/error.hpp"
#include "unmemo/harness.hpp"

namespace unmemo {

extern const char* const kReportSchemaText;

namespace {

using json = nlohmann::json;

bool has_type(const json& doc, const std::string& type) {
  if (type == "object") return doc.is_object();
  if (type == "array") return doc.is_array();
  if (type == "string") return doc.is_string();
  if (type == "boolean") return doc.is_boolean();
  if (type == "null") return doc.is_null();
  if (type == "number") return doc.is_number();
  if (type == "integer") return doc.is_number_integer();
  return false;
}

void check(const json& schema, const json& doc, const std::string& path, std::vector<std::string>& errors) {
  if (auto it = schema.find("type"); it != schema.end()) {
    bool ok = false;
    if (it->is_array()) {
      for (const auto& t : *it) ok = ok || has_type(doc, t.get<std::string>());
    } else {
      ok = has_type(doc, it->get<std::string>());
    }
    if (!ok) {
      errors.push_back(path + ": expected type " + it->dump());
      return;
    }
  }
  if (auto it = schema.find("enum"); it != schema.end()) {
    bool found = false;
    for (const auto& v : *it) found = found || v == doc;
    if (!found) errors.push_back(path + ": value " + doc.dump() + " not in enum");
  }
  if (doc.is_number()) {
    const double v = doc.get<double>();
    if (auto it = schema.find("minimum"); it != schema.end() && v < it->get<double>())
      errors.push_back(path + ": below minimum");
    if (auto it = schema.find("maximum"); it != schema.end() && v > it->get<double>())
      errors.push_back(path + ": above maximum");
  }
  if (doc.is_object()) {
    if (auto it = schema.find("required"); it != schema.end())
      for (const auto& key : *it)
        if (!doc.contains(key.get<std::string>())) errors.push_back(path + ": missing " + key.get<std::string>());
    const auto props = schema.find("properties");
    const bool closed = schema.value("additionalProperties", true) == false;
    for (const auto& [key, value] : doc.items()) {
      if (props != schema.end() && props->contains(key)) {
        check((*props)[key], value, path + "/" + key, errors);
      } else if (closed) {
        errors.push_back(path + ": unexpected property " + key);
      }
    }
  }
  if (doc.is_array()) {
    if (auto it = schema.find("items"); it != schema.end())
      for (std::size_t i = 0; i < doc.size(); ++i) check(*it, doc[i], path + "/" + std::to_string(i), errors);
  }
}

}  // namespace

std::vector<std::string> validate_json(const json& schema, const json& doc) {
  std::vector<std::string> errors;
  check(schema, doc, "", errors);
  return errors;
}

json load_report_schema() {
  static const json schema = json::parse(kReportSchemaText);
  return schema;
}

}  // namespace unmemo
