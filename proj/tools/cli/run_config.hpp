#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pairloc/eval.hpp"
#include "pairloc/locate.hpp"
#include "pairloc/predictions.hpp"
#include "pairloc/synth.hpp"
#include "pairloc/sync.hpp"

namespace pairloc::cli {

struct KeySpec {
    std::string name;
    std::string default_value;  // empty: unset
    std::string help;
    bool echoed = true;  // execution-only keys do not change results and stay out of the echo
};

// Flat key-value run configuration. Values are layered default < file <
// flag; each layer overrides the previous one key by key.
//
// File format: `key = value` per line, '#' starts a comment.
class RunConfig {
public:
    RunConfig();

    static const std::vector<KeySpec>& keys();

    void load_file(const std::string& path);
    void parse(std::istream& in, const std::string& source);

    // Throws ConfigError for an unknown key.
    void set(const std::string& key, const std::string& value);

    bool has(const std::string& key) const;
    const std::string& get(const std::string& key) const;  // ConfigError when unset
    std::optional<std::string> maybe(const std::string& key) const;
    double number(const std::string& key) const;
    std::optional<double> maybe_number(const std::string& key) const;
    std::int64_t integer(const std::string& key) const;
    bool flag(const std::string& key) const;

    // Sorted `key = value` pairs of every echoed key that is set.
    ConfigEcho echo() const;

    SyncConfig sync_config() const;
    LocateConfig locate_config() const;
    EvalConfig eval_config() const;
    ScenarioOptions scenario_options() const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace pairloc::cli
