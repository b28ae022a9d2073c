use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The nine annotated driver behaviors, in their fixed id order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BehaviorLabel {
    NormalDriving,
    Texting,
    Eating,
    Talking,
    Searching,
    Drinking,
    WatchingVideo,
    Gaming,
    Preparing,
}

impl BehaviorLabel {
    pub const COUNT: usize = 9;

    pub const ALL: [BehaviorLabel; 9] = [
        BehaviorLabel::NormalDriving,
        BehaviorLabel::Texting,
        BehaviorLabel::Eating,
        BehaviorLabel::Talking,
        BehaviorLabel::Searching,
        BehaviorLabel::Drinking,
        BehaviorLabel::WatchingVideo,
        BehaviorLabel::Gaming,
        BehaviorLabel::Preparing,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Result<Self> {
        Self::ALL.get(id).copied().ok_or(Error::InvalidLabel {
            label: id,
            classes: Self::COUNT,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            BehaviorLabel::NormalDriving => "normal_driving",
            BehaviorLabel::Texting => "texting",
            BehaviorLabel::Eating => "eating",
            BehaviorLabel::Talking => "talking",
            BehaviorLabel::Searching => "searching",
            BehaviorLabel::Drinking => "drinking",
            BehaviorLabel::WatchingVideo => "watching_video",
            BehaviorLabel::Gaming => "gaming",
            BehaviorLabel::Preparing => "preparing",
        }
    }
}

/// Coarse five-way label space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AggregatedLabel {
    NormalDriving,
    UsingPhone,
    EatAndDrink,
    Talking,
    Preparing,
}

impl AggregatedLabel {
    pub const COUNT: usize = 5;

    pub const ALL: [AggregatedLabel; 5] = [
        AggregatedLabel::NormalDriving,
        AggregatedLabel::UsingPhone,
        AggregatedLabel::EatAndDrink,
        AggregatedLabel::Talking,
        AggregatedLabel::Preparing,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            AggregatedLabel::NormalDriving => "normal_driving",
            AggregatedLabel::UsingPhone => "using_phone",
            AggregatedLabel::EatAndDrink => "eat_and_drink",
            AggregatedLabel::Talking => "talking",
            AggregatedLabel::Preparing => "preparing",
        }
    }
}

pub fn aggregate_label(l: BehaviorLabel) -> AggregatedLabel {
    use BehaviorLabel as B;
    match l {
        B::NormalDriving => AggregatedLabel::NormalDriving,
        B::Texting | B::Searching | B::WatchingVideo | B::Gaming => AggregatedLabel::UsingPhone,
        B::Eating | B::Drinking => AggregatedLabel::EatAndDrink,
        B::Talking => AggregatedLabel::Talking,
        B::Preparing => AggregatedLabel::Preparing,
    }
}

/// Id-level form of [`aggregate_label`].
pub fn aggregate_id(id: usize) -> Result<usize> {
    Ok(aggregate_label(BehaviorLabel::from_id(id)?).id())
}
