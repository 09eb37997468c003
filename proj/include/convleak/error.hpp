/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 * This file is part of convleak.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace convleak {

// Exit codes used by the command-line driver.
enum class ExitCode : int {
    ok = 0,
    config_error = 2,
    data_error = 3,
    not_applicable = 4,
};

class Error : public std::runtime_error {
public:
    Error(const std::string &what, ExitCode code)
        : std::runtime_error(what), code_(code) {}

    ExitCode code() const noexcept { return code_; }

private:
    ExitCode code_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string &what)
        : Error(what, ExitCode::config_error) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string &what)
        : Error(what, ExitCode::data_error) {}
};

// Bad magic number, header field or token in an input file.
class FormatError : public DataError {
public:
    explicit FormatError(const std::string &what) : DataError(what) {}
};

// Payload shorter than its header promises, or a signal too short to
// process.
class LengthError : public DataError {
public:
    explicit LengthError(const std::string &what) : DataError(what) {}
};

class DimensionError : public DataError {
public:
    explicit DimensionError(const std::string &what) : DataError(what) {}
};

class UnsupportedError : public DataError {
public:
    explicit UnsupportedError(const std::string &what) : DataError(what) {}
};

// The attack cannot be carried out on this input (flat histogram, no
// candidates, incoherent feature vectors, ...).
class NotApplicableError : public Error {
public:
    explicit NotApplicableError(const std::string &what)
        : Error(what, ExitCode::not_applicable) {}
};

} // namespace convleak
