"""Synthetic corpora, fine-tuning pairs and search-volume panels.

Used to build the bundled miniature fixture and by the tests. Everything is
a pure function of its seed.
"""
from __future__ import annotations

import numpy as np

from .corpus import FineTuneExample

# topic -> words; the first word of each topic is its seed keyword
TOPICS = {
    "infrastructure": ["铁路", "公路", "机场", "桥梁", "高铁", "港口", "隧道"],
    "new_infrastructure": ["数据中心", "人工智能", "互联网", "芯片", "算力", "云计算", "基站"],
    "state_owned": ["国有企业", "央企", "国资委", "集团公司", "混改", "事业单位"],
    "real_estate": ["房地产", "房价", "住宅", "楼盘", "物业", "租赁"],
    "foreign": ["外资企业", "美国商务部", "合资企业", "关税", "进出口", "跨国公司"],
    "economic": ["贷款", "利率", "降准", "银行", "减税", "信贷"],
}
CONNECTORS = ["和", "与", "以及"]
VERBS = ["推动", "支持", "带动", "促进", "影响", "扩大", "稳定", "改善"]
NOUNS = ["发展", "建设", "政策", "市场", "需求", "规模", "项目", "预期"]
TIME_WORDS = ["今年", "近期", "明年", "上半年", "本季度"]
STOPWORDS = ["的", "和", "与", "以及", "了", "在"]

# primary, secondary, topic; seed entries come first in each topic list
HIERARCHY = [
    ("政府投资", "基础设施投资", "infrastructure"),
    ("政府投资", "新型基础设施投资", "new_infrastructure"),
    ("政府影响的投资", "国有企业投资", "state_owned"),
    ("民间投资", "房地产投资", "real_estate"),
    ("外商投资", "外商投资", "foreign"),
    ("投资环境", "经济环境", "economic"),
]
SEED_POLARITY = {"房地产": "two_way", "美国商务部": "negative"}
EXTRA_SEEDS = {"foreign": ["美国商务部"]}
PANEL_KEYWORDS = ["铁路", "公路", "数据中心", "人工智能", "国有企业", "房地产", "房价",
                  "外资企业", "美国商务部", "贷款"]
# how strongly each keyword follows latent activity; negative = counter-cyclical
LOADINGS = {"铁路": 0.9, "公路": 0.7, "数据中心": 0.8, "人工智能": 0.6, "国有企业": 0.7,
            "房地产": 0.5, "房价": 0.4, "外资企业": 0.0, "美国商务部": -0.6, "贷款": 0.8}
LATE_START_DAYS = {"人工智能": 45}
REGIONS = {"北京": 1.3, "广西": 0.8, "江苏": 1.0}


def lexicon_words() -> list[str]:
    words = set(CONNECTORS + VERBS + NOUNS + TIME_WORDS)
    for ws in TOPICS.values():
        words.update(ws)
    return sorted(words)


def hierarchy_rows() -> list[dict[str, str]]:
    rows = []
    for primary, secondary, topic in HIERARCHY:
        seeds = [TOPICS[topic][0]] + EXTRA_SEEDS.get(topic, [])
        for s in seeds:
            rows.append(dict(primary=primary, secondary=secondary, entry=s,
                             polarity=SEED_POLARITY.get(s, "positive")))
    return rows


def _sentence(rng, topic: str) -> str:
    ws = TOPICS[topic]
    a, b, c = rng.choice(len(ws), 3, replace=False)
    t = TIME_WORDS[rng.integers(len(TIME_WORDS))]
    conn = CONNECTORS[rng.integers(len(CONNECTORS))]
    verb = VERBS[rng.integers(len(VERBS))]
    noun = NOUNS[rng.integers(len(NOUNS))]
    return f"{t}{ws[a]}{conn}{ws[b]}{verb}了{ws[c]}的{noun}。"


def make_corpus(n_sentences: int = 200, sentences_per_doc: int = 4, seed: int = 0) -> list[str]:
    """Documents of single-topic sentences; ``n_sentences`` in total."""
    rng = np.random.default_rng(seed)
    topics = list(TOPICS)
    docs = []
    remaining = n_sentences
    while remaining > 0:
        k = min(sentences_per_doc, remaining)
        topic = topics[rng.integers(len(topics))]
        docs.append("".join(_sentence(rng, topic) for _ in range(k)))
        remaining -= k
    return docs


def make_finetune_examples(n: int = 400, seed: int = 0) -> list[FineTuneExample]:
    """Balanced [tag, word, text] pairs; tag 1 iff the word occurs in the text.

    Positive texts come from the word's own topic, negative texts from a
    different topic, whose vocabulary is disjoint from the word's.
    """
    rng = np.random.default_rng(seed)
    topics = list(TOPICS)
    out = []
    for i in range(n):
        tag = i % 2
        topic = topics[rng.integers(len(topics))]
        if tag:
            text = _sentence(rng, topic)
            present = [w for w in TOPICS[topic] if w in text]
            word = present[rng.integers(len(present))]
        else:
            other = [t for t in topics if t != topic]
            text = _sentence(rng, other[rng.integers(len(other))])
            word = TOPICS[topic][rng.integers(len(TOPICS[topic]))]
        out.append(FineTuneExample(tag, word, text))
    return out


def latent_activity(dates: np.ndarray, seed: int = 0) -> np.ndarray:
    """Daily activity: slow cycle, Spring-Festival dip in Jan/Feb, AR(1) noise."""
    rng = np.random.default_rng(seed)
    t = np.arange(len(dates), dtype=np.float64)
    months = (dates.astype("datetime64[M]").astype(int) % 12) + 1
    cycle = 0.6 * np.sin(2 * np.pi * t / 365.0) + 0.4 * np.sin(2 * np.pi * t / 170.0)
    dip = np.where(np.isin(months, [1, 2]), -0.8, 0.0)
    ar = np.zeros(len(t))
    eps = rng.normal(0, 0.05, len(t))
    for i in range(1, len(t)):
        ar[i] = 0.9 * ar[i - 1] + eps[i]
    return cycle + dip + ar


def make_panel_records(start: str = "2020-06-01", n_days: int = 730, seed: int = 0,
                       national: bool = False, prehistory: int = 160):
    """Long records (date, keyword, region, value) plus the daily latent activity.

    The returned dates and activity begin ``prehistory`` days before
    ``start`` so that lagged investment can be generated for every panel
    month; records themselves start at ``start``.
    """
    rng = np.random.default_rng(seed)
    first = np.datetime64(start) - prehistory
    dates = np.arange(first, np.datetime64(start) + n_days, dtype="datetime64[D]")
    activity = latent_activity(dates, seed)
    regions = dict(REGIONS)
    if national:
        regions = {"national": 1.0, **regions}
    records = []
    for region, scale in regions.items():
        for kw in PANEL_KEYWORDS:
            base = 1000.0 * scale * (1.0 + 0.1 * PANEL_KEYWORDS.index(kw))
            noise = rng.normal(0, 0.15, n_days)
            series = base * np.exp(0.35 * LOADINGS[kw] * activity[prehistory:] + noise)
            for i, d in enumerate(dates[prehistory:]):
                if i < LATE_START_DAYS.get(kw, 0):
                    continue
                records.append((str(d), kw, region, round(float(series[i]), 2)))
    return records, dates, activity


def make_investment(dates: np.ndarray, activity: np.ndarray, lag_months: int = 4, seed: int = 0,
                    drop_january: bool = True, first_month: str | None = None) -> dict[str, float]:
    """Monthly investment following activity ``lag_months`` earlier.

    Months before ``first_month`` (YYYY-MM) are not reported.
    """
    rng = np.random.default_rng(seed + 1)
    months = dates.astype("datetime64[M]")
    uniq = np.unique(months)
    monthly = np.array([activity[months == m].mean() for m in uniq])
    out = {}
    for i in range(lag_months, len(uniq)):
        label = str(uniq[i])
        value = 5000.0 * (1.0 + 0.3 * monthly[i - lag_months]) + rng.normal(0, 40.0)
        if (drop_january and label.endswith("-01")) or (first_month and label < first_month):
            continue
        out[label] = round(float(value), 2)
    return out
