#pragma once

#include <cctype>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace eigenlen::toml {

// A deliberately small TOML subset: top-level keys, one level of [section]
// tables, and values that are strings, booleans, numbers, or flat arrays of
// same. Section keys flatten to "section.key".

struct Value {
    enum class Kind { Bool, Int, Float, String, Array };
    Kind kind = Kind::String;
    bool b = false;
    std::int64_t i = 0;
    double f = 0.0;
    std::string s;
    std::vector<Value> array;

    double as_number() const {
        if (kind == Kind::Int) return static_cast<double>(i);
        if (kind == Kind::Float) return f;
        throw std::runtime_error("config value is not a number");
    }
};

using Table = std::map<std::string, Value>;

namespace detail {

inline std::string strip(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

// removes a trailing comment that is not inside a string literal
inline std::string strip_comment(const std::string& s) {
    bool in_string = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"') in_string = !in_string;
        if (s[i] == '#' && !in_string) return s.substr(0, i);
    }
    return s;
}

inline Value parse_scalar(const std::string& raw, int line) {
    const std::string text = strip(raw);
    Value v;
    if (text.empty()) throw std::runtime_error("line " + std::to_string(line) + ": empty value");
    if (text.front() == '"') {
        if (text.size() < 2 || text.back() != '"')
            throw std::runtime_error("line " + std::to_string(line) + ": unterminated string");
        v.kind = Value::Kind::String;
        v.s = text.substr(1, text.size() - 2);
        return v;
    }
    if (text == "true" || text == "false") {
        v.kind = Value::Kind::Bool;
        v.b = text == "true";
        return v;
    }
    try {
        std::size_t used = 0;
        if (text.find_first_of(".eE") == std::string::npos) {
            v.kind = Value::Kind::Int;
            v.i = std::stoll(text, &used);
        } else {
            v.kind = Value::Kind::Float;
            v.f = std::stod(text, &used);
        }
        if (used != text.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
        throw std::runtime_error("line " + std::to_string(line) + ": cannot parse value '" +
                                 text + "'");
    }
    return v;
}

inline Value parse_value(const std::string& raw, int line) {
    const std::string text = strip(raw);
    if (!text.empty() && text.front() == '[') {
        if (text.back() != ']')
            throw std::runtime_error("line " + std::to_string(line) + ": unterminated array");
        Value v;
        v.kind = Value::Kind::Array;
        const std::string inner = text.substr(1, text.size() - 2);
        std::string item;
        bool in_string = false;
        for (char c : inner) {
            if (c == '"') in_string = !in_string;
            if (c == ',' && !in_string) {
                if (!strip(item).empty()) v.array.push_back(parse_scalar(item, line));
                item.clear();
            } else {
                item += c;
            }
        }
        if (!strip(item).empty()) v.array.push_back(parse_scalar(item, line));
        return v;
    }
    return parse_scalar(text, line);
}

}  // namespace detail

inline Table parse(const std::string& text) {
    Table table;
    std::string section;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos
                                                                    : nl - pos);
        pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        line = detail::strip(detail::strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::runtime_error("line " + std::to_string(line_no) + ": bad section");
            section = detail::strip(line.substr(1, line.size() - 2));
            if (section.empty())
                throw std::runtime_error("line " + std::to_string(line_no) + ": empty section");
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = detail::strip(line.substr(0, eq));
        if (key.empty())
            throw std::runtime_error("line " + std::to_string(line_no) + ": empty key");
        const std::string full = section.empty() ? key : section + "." + key;
        if (table.count(full))
            throw std::runtime_error("line " + std::to_string(line_no) + ": duplicate key '" +
                                     full + "'");
        table[full] = detail::parse_value(line.substr(eq + 1), line_no);
    }
    return table;
}

}  // namespace eigenlen::toml
