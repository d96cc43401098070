#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace et::config {

struct SchemaEntry {
    std::string key;
    std::string def;
    std::string desc;
};

// every documented key with its default; the single source of truth for
// files, flag overrides, --help text, and run manifests
const std::vector<SchemaEntry>& schema();

class Settings {
public:
    static Settings defaults();

    // key=value lines, '#' comments, blank lines ignored
    void load_file(const std::string& path);
    // unknown keys are hard errors
    void set(const std::string& key, const std::string& value);
    bool known(const std::string& key) const;

    const std::string& get(const std::string& key) const;
    double get_double(const std::string& key) const;
    std::size_t get_size(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    const std::map<std::string, std::string>& values() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

} // namespace et::config
