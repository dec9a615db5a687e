#pragma once

#include <iosfwd>
#include <map>
#include <string>

namespace mdet {

// "key = value" lines; '#' starts a comment. Later keys override earlier ones.
std::map<std::string, std::string> parse_kv(std::istream& is);
std::map<std::string, std::string> load_kv(const std::string& path);
void write_kv(std::ostream& os, const std::map<std::string, std::string>& kv);

int kv_int(const std::map<std::string, std::string>& kv, const std::string& key, int fallback);
double kv_double(const std::map<std::string, std::string>& kv, const std::string& key, double fallback);
bool kv_bool(const std::map<std::string, std::string>& kv, const std::string& key, bool fallback);
std::string kv_string(const std::map<std::string, std::string>& kv, const std::string& key, const std::string& fallback);

// %.17g, which reads back to the same double.
std::string format_double(double v);

}  // namespace mdet
