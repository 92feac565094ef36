#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace arbiter::io {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <class T>
    requires std::is_trivially_copyable_v<T>
void put(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
    requires std::is_trivially_copyable_v<T>
T get(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw FormatError("truncated checkpoint");
    return value;
}

inline void put_string(std::ostream& out, const std::string& s) {
    put<std::uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in, std::size_t max_len = 1 << 20) {
    const auto n = get<std::uint64_t>(in);
    if (n > max_len) throw FormatError("corrupt checkpoint string length");
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw FormatError("truncated checkpoint");
    return s;
}

inline void put_doubles(std::ostream& out, const std::vector<double>& xs) {
    put<std::uint64_t>(out, xs.size());
    out.write(reinterpret_cast<const char*>(xs.data()), static_cast<std::streamsize>(xs.size() * sizeof(double)));
}

inline std::vector<double> get_doubles(std::istream& in, std::size_t max_len = 1 << 26) {
    const auto n = get<std::uint64_t>(in);
    if (n > max_len) throw FormatError("corrupt checkpoint vector length");
    std::vector<double> xs(n);
    in.read(reinterpret_cast<char*>(xs.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw FormatError("truncated checkpoint");
    return xs;
}

}  // namespace arbiter::io
