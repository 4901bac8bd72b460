#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "polyaudit/common.hpp"

namespace polyaudit {

using json = nlohmann::json;

// Strict object reader: every key must be known, missing keys either fall
// back to an explicit default or raise a ConfigError naming the key.
class JsonReader {
  public:
    JsonReader(const json& j, std::string context)
        : j_(j), ctx_(std::move(context)) {
        require_config(j_.is_object(), ctx_ + ": expected a JSON object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    template <typename T>
    T get(const std::string& key) {
        seen_.insert(key);
        require_config(j_.contains(key), ctx_ + "." + key + ": missing key");
        return read_as<T>(key);
    }

    template <typename T>
    T get_or(const std::string& key, T fallback) {
        seen_.insert(key);
        if (!j_.contains(key)) return fallback;
        return read_as<T>(key);
    }

    const json& sub(const std::string& key) {
        seen_.insert(key);
        require_config(j_.contains(key), ctx_ + "." + key + ": missing key");
        return j_.at(key);
    }

    const json* sub_if_present(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    // Call last: rejects any key not consumed above.
    void done() const {
        for (const auto& item : j_.items())
            require_config(seen_.count(item.key()) > 0,
                           ctx_ + "." + item.key() + ": unknown key");
    }

  private:
    template <typename T>
    T read_as(const std::string& key) {
        try {
            return j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(ctx_ + "." + key + ": wrong value type");
        }
    }

    const json& j_;
    std::string ctx_;
    std::set<std::string> seen_;
};

inline json parse_json_text(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(what + ": malformed JSON (" + std::string(e.what()) +
                        ")");
    }
}

}  // namespace polyaudit
