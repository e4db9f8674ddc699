#ifndef MMNAS_TOOLS_JSON_CONFIG_HPP
#define MMNAS_TOOLS_JSON_CONFIG_HPP

#include <CLI11.hpp>
#include <json.hpp>

namespace mmnas::cli {

// CLI11 config formatter for JSON files. Nested objects address
// subcommands: {"seed": 3, "search": {"budget": 8}}. Explicit flags win
// over file values.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    return dump(app, default_also).dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json j;
    try {
      input >> j;
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    flatten(j, "", {}, items);
    return items;
  }

 private:
  // Numbers and bracketed lists go back out as JSON, everything else as text.
  static nlohmann::json value(const std::string& text) {
    auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || j.is_string() || j.is_object()) return text;
    return j;
  }

  static nlohmann::json dump(const CLI::App* app, bool default_also) {
    nlohmann::json j = nlohmann::json::object();
    for (const CLI::Option* opt : app->get_options({})) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string name = opt->get_lnames()[0];
      if (opt->get_type_size() != 0) {
        if (opt->count() == 1)
          j[name] = value(opt->results().at(0));
        else if (opt->count() > 1) {
          j[name] = nlohmann::json::array();
          for (const auto& r : opt->results()) j[name].push_back(value(r));
        } else if (default_also && !opt->get_default_str().empty())
          j[name] = value(opt->get_default_str());
      } else if (opt->count() > 0) {
        j[name] = true;
      }
    }
    for (const CLI::App* sub : app->get_subcommands({}))
      if (sub->parsed()) j[sub->get_name()] = dump(sub, default_also);
    return j;
  }

  static void flatten(const nlohmann::json& j, const std::string& name,
                      std::vector<std::string> parents, std::vector<CLI::ConfigItem>& out) {
    if (j.is_object()) {
      if (!name.empty()) parents.push_back(name);
      for (auto it = j.begin(); it != j.end(); ++it) flatten(*it, it.key(), parents, out);
      return;
    }
    CLI::ConfigItem item;
    item.name = name;
    item.parents = std::move(parents);
    auto scalar = [](const nlohmann::json& v) -> std::string {
      if (v.is_string()) return v.get<std::string>();
      if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
      if (v.is_number()) return v.dump();
      throw CLI::ConversionError("unsupported config value " + v.dump());
    };
    if (j.is_array()) {
      for (const auto& v : j) item.inputs.push_back(scalar(v));
    } else {
      item.inputs.push_back(scalar(j));
    }
    out.push_back(std::move(item));
  }
};

}  // namespace mmnas::cli

#endif  // MMNAS_TOOLS_JSON_CONFIG_HPP
