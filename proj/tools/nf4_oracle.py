# Copyright 2026 The traitlab Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Reference NF4 codebook at 50 significant digits.

Writes the 16 levels as JSON. The test suite compares the C++ codebook
against the frozen output in tests/data/nf4_codebook.json.

    python3 tools/nf4_oracle.py > tests/data/nf4_codebook.json
"""

import json

import mpmath

mpmath.mp.dps = 50


def quantile(p):
    return mpmath.sqrt(2) * mpmath.erfinv(2 * p - 1)


def codebook():
    offset = (mpmath.mpf(1) - mpmath.mpf(1) / 30 + 1 - mpmath.mpf(1) / 32) / 2

    def spaced(n, i):
        return offset + (mpmath.mpf("0.5") - offset) * i / (n - 1)

    pos = [quantile(spaced(9, i)) for i in range(8)]
    neg = [-quantile(spaced(8, i)) for i in range(7)]
    values = sorted(pos + [mpmath.mpf(0)] + neg)
    top = values[-1]
    return [v / top for v in values]


if __name__ == "__main__":
    levels = codebook()
    print(json.dumps({"digits": 50,
                      "levels": [mpmath.nstr(v, 25) for v in levels]},
                     indent=2))
