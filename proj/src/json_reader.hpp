#pragma once

#include <string>

#include <json.hpp>

#include "gridopf/errors.hpp"
#include "gridopf/grid_model.hpp"

namespace gridopf::detail {

using nlohmann::json;

struct Reader {
    std::string origin;

    [[noreturn]] void fail(const std::string& field, const std::string& msg) const {
        throw ConfigError(origin + ": " + field + ": " + msg);
    }

    const json& get(const json& obj, const std::string& key, const std::string& field) const {
        if (!obj.is_object()) fail(field, "expected an object");
        auto it = obj.find(key);
        if (it == obj.end()) fail(field + "." + key, "missing field");
        return *it;
    }

    double number(const json& v, const std::string& field) const {
        if (!v.is_number()) fail(field, "expected a number");
        return v.get<double>();
    }

    std::string id(const json& v, const std::string& field) const {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_number_integer()) return std::to_string(v.get<long long>());
        fail(field, "expected a string or integer bus id");
    }

    PhaseSet phases(const json& v, const std::string& field) const {
        try {
            if (v.is_string()) return PhaseSet::parse(v.get<std::string>());
            if (v.is_array()) {
                std::string letters;
                for (const auto& p : v) {
                    if (!p.is_string() || p.get<std::string>().size() != 1) fail(field, "expected phase letters");
                    letters += p.get<std::string>();
                }
                return PhaseSet::parse(letters);
            }
        } catch (const std::invalid_argument& e) {
            fail(field, e.what());
        }
        fail(field, "expected a phase string such as \"abc\"");
    }

    Complex complex(const json& v, const std::string& field) const {
        if (!v.is_array() || v.size() != 2) fail(field, "expected [re, im]");
        return {number(v[0], field + "[0]"), number(v[1], field + "[1]")};
    }
};


}  // namespace gridopf::detail
