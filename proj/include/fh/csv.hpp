#ifndef FH_CSV_HPP
#define FH_CSV_HPP

#include "fh/error.hpp"

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace fh
{
/// 17 significant digits: enough to restore any double exactly.
inline std::string format_double(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Plain comma-separated rows; no quoting (none of our fields contain commas).
inline std::string csv_line(const std::vector< std::string >& fields)
{
    std::string s;
    for (std::size_t i = 0; i < fields.size(); ++i)
    {
        if (i)
            s += ',';
        s += fields[i];
    }
    s += '\n';
    return s;
}

inline std::vector< std::string > split_csv(const std::string& line)
{
    std::vector< std::string > out;
    std::string cur;
    std::istringstream in(line);
    while (std::getline(in, cur, ','))
        out.push_back(cur);
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

struct CsvTable
{
    std::vector< std::string > comments; // leading '#' lines, without the '#'
    std::vector< std::string > header;
    std::vector< std::vector< std::string > > rows;

    std::size_t column(const std::string& name) const
    {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name)
                return i;
        fail(ErrorKind::Integrity, "missing CSV column '" + name + "'");
    }
};

inline CsvTable parse_csv(const std::string& text)
{
    CsvTable t;
    std::istringstream in(text);
    std::string line;
    bool have_header = false;
    while (std::getline(in, line))
    {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        if (line[0] == '#')
        {
            t.comments.push_back(line.substr(1));
            continue;
        }
        auto fields = split_csv(line);
        if (!have_header)
        {
            t.header = std::move(fields);
            have_header = true;
            continue;
        }
        require(fields.size() == t.header.size(), ErrorKind::Integrity,
                "CSV row has " + std::to_string(fields.size()) + " fields, header has " + std::to_string(t.header.size()));
        t.rows.push_back(std::move(fields));
    }
    return t;
}
} // namespace fh

#endif // FH_CSV_HPP
