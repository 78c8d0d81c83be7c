#ifndef CADAPT_CONFIG_HPP
#define CADAPT_CONFIG_HPP

#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace cadapt {

/// Unknown or malformed configuration key.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Parsed `key = value` lines. '#' starts a comment; blank lines are ignored.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::filesystem::path& path);

/// Valid key closest to `key` by edit distance.
std::string closest_key(const std::string& key, const std::vector<std::string>& valid);
std::size_t edit_distance(const std::string& a, const std::string& b);

/// Binds string keys to fields of a config struct.
template <typename Config>
class FieldTable {
public:
    struct Field {
        std::string name;
        std::function<void(Config&, const std::string&)> set;
        std::function<std::string(const Config&)> get;
    };

    FieldTable& add(std::string name, std::function<void(Config&, const std::string&)> set,
                    std::function<std::string(const Config&)> get) {
        fields_.push_back({std::move(name), std::move(set), std::move(get)});
        return *this;
    }

    std::vector<std::string> keys() const {
        std::vector<std::string> out;
        for (const auto& f : fields_) out.push_back(f.name);
        return out;
    }

    void apply(Config& cfg, const KeyValues& kv) const {
        for (const auto& [key, value] : kv) {
            const Field* f = find(key);
            if (f == nullptr) {
                std::string msg = "unknown config key '" + key + "'; did you mean '" +
                                  closest_key(key, keys()) + "'? valid keys:";
                for (const auto& k : keys()) msg += " " + k;
                throw ConfigError(msg);
            }
            try {
                f->set(cfg, value);
            } catch (const ConfigError&) {
                throw;
            } catch (const std::exception& e) {
                throw ConfigError("invalid value '" + value + "' for key '" + key + "': " + e.what());
            }
        }
    }

    /// Canonical `key = value` text in declaration order.
    std::string dump(const Config& cfg) const {
        std::string out;
        for (const auto& f : fields_) out += f.name + " = " + f.get(cfg) + "\n";
        return out;
    }

private:
    const Field* find(const std::string& key) const {
        for (const auto& f : fields_) {
            if (f.name == key) return &f;
        }
        return nullptr;
    }

    std::vector<Field> fields_;
};

// Strict scalar parsers used by the field tables.
int parse_int(const std::string& s);
std::size_t parse_size(const std::string& s);
double parse_double(const std::string& s);
bool parse_bool(const std::string& s);
std::string format_double(double v);

/// 16 hex digits of a 64-bit FNV-1a hash.
std::string hash_text(const std::string& text);

}  // namespace cadapt

#endif
